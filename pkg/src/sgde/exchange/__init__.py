from .http import HttpClient, LocalClient, RegistryServer
from .registry import ClientRecord, PoolEntry, PushResult, Registry

__all__ = ["ClientRecord", "HttpClient", "LocalClient", "PoolEntry", "PushResult", "Registry",
           "RegistryServer"]

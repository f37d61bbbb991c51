from .queries import Mode, Query, Validation, build_query, validate_input
from .server import DIALECT_HEADER, Testbed, TestbedConfig, start_testbed
from .store import DATABASE_NAME, RESERVED_SEPARATOR, Store, TestbedSchema, load_schema, seed_store

__all__ = [
    "DATABASE_NAME", "DIALECT_HEADER", "Mode", "Query", "RESERVED_SEPARATOR", "Store", "Testbed",
    "TestbedConfig", "TestbedSchema", "Validation", "build_query", "load_schema", "seed_store",
    "start_testbed", "validate_input",
]

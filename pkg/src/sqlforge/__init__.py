"""sqlforge: SQL injection testbed, scanner, exploiter and patch verifier."""

__version__ = "0.1.0"

CWE_SQLI = "CWE-89"

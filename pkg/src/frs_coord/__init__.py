"""Safety-critical coordination with reachable-set HOCBFs and SRB MPC."""
__version__ = "0.1.0"

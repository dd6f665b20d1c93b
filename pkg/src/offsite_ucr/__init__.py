"""UCR-maximising resource allocation for secure offsite-tuning at the edge."""

__version__ = "0.1.0"

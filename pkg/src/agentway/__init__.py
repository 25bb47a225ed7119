"""Mobile-agent migration runtime: state-only transfers, push-model code
distribution with tree multicast, an LRU code cache, tunable transports,
and an instrumented seven-phase migration benchmark."""

__version__ = "0.1.0"

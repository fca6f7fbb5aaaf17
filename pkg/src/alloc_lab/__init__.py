"""Match probability of weight allocations in linear RNNs, linear FF chains and two-layer ReLU networks."""

__version__ = "0.1.0"

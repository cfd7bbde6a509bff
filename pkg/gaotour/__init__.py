# Best-of-many Christofides for the metric s-t-path TSP on reassembled tree ensembles.

"""Autoregressive grid-image generation conditioned on scene graphs.

The package is organized around a small numpy-backed reverse-mode autodiff
core (`tensor`, `ops`, `optim`, `gradcheck`) on top of which the models are
written directly: a relational graph-convolution encoder (`gcn`), an
encoder-decoder transformer over image feature tokens (`transformer`), and a
convolutional autoencoder whose bottleneck features serve as those tokens
(`autoencoder`).  `scenegraph` and `gridsets` define the scene-graph format
and the grid dataset builder, `metrics` the evaluation measures, `training`
the end-to-end variants and loops, and `cli` the command-line entry point.
"""

__version__ = "0.1.0"

"""FCN classification of 12-lead ECG-shaped time series with explainability.

Subpackages by concern:

* :mod:`ecgfcn.signals`    -- data model, input layouts, splits, dataset I/O
* :mod:`ecgfcn.datagen`    -- synthetic multi-class signal generator
* :mod:`ecgfcn.fcn`        -- model builders, forward/backward, checkpoints
* :mod:`ecgfcn.trainer`    -- loss, optimizers, training loops, metrics
* :mod:`ecgfcn.xai`        -- guided backprop, Grad-CAM, guided Grad-CAM
* :mod:`ecgfcn.clustering` -- DTW distance, K-medoids, silhouette
* :mod:`ecgfcn.stats`      -- lead importance, exact test, region remapping
* :mod:`ecgfcn.cli`        -- the ``ecgfcn`` command-line pipeline
"""

from . import clustering, datagen, fcn, signals, stats, trainer, xai  # noqa: F401

__version__ = "0.1.0"

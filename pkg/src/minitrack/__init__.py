"""minitrack: Siamese pre-estimation + online LSTM classification tracking.

Core package layout:

- ``nn``        dense kernels (valid conv, cross-correlation, softmax-xent,
                ADAM) with hand-derived gradients, plus the weight-file format
- ``matcher``   convolutional embedding, template, per-scale score maps
- ``proposals`` top-N selection and direct feature-map cropping
- ``lstm``      the online per-object classifier (single-step training)
- ``gan``       generator/discriminator positive-sample augmentation
- ``sampling``  Gaussian sample drawing, IoU, hard negative mining
- ``tracker``   the per-frame loop and session state
- ``sequences`` OTB-style ingestion, export, synthetic generator
- ``metrics``   precision / success-AUC evaluation
- ``service``   FastAPI app exposing sessions, metrics and synthesis
- ``cli``       thin HTTP client driving the service
"""

__version__ = "0.1.0"

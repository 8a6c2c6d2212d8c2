"""glmdesk: a desk-scale GLM-style decoder stack and pre-training data pipeline.

Subpackages and modules:

* ``numerics``, ``layers``, ``position``, ``attention``: tensor kernels
* ``model``: configuration, blank-infilling samples, forward/backward, training, checkpoints
* ``decoder``: KV cache, prefill/decode, sampling
* ``tokenizer``: byte-level BPE
* ``datapipe``: document filtering and MinHash/LSH deduplication
* ``cli``: the ``glmdesk`` command

Hot kernels are compiled with numba when it is available; set
``GLMDESK_BACKEND=numpy`` (or use :func:`glmdesk._backend.use_backend`) to run
the pure-numpy implementations, which produce the same results.
"""

__version__ = "0.1.0"

"""chat2img: automatic chat-to-image pipeline.

Freestyle chat goes in; a professional prompt, a routed model, a validated
argument set and a rendered image come out. The package also ships the
benchmark builder, training for the model-token selection head, the
evaluation metrics and an HTTP gateway.
"""

__version__ = "0.1.0"

from .errors import Chat2ImgError

__all__ = ["Chat2ImgError", "__version__"]

"""Registry of the supported pretrained architectures.

Each entry names the Keras builder, the canonical input size, the
matching input preprocessing, and the width of the final pre-
classification pooling layer, which is the default extraction point.
"""

from dataclasses import dataclass
from typing import Callable


class WeightsUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelEntry:
    builder_name: str
    preprocess_module: str
    canonical_size: int
    pooled_dim: int


REGISTRY = {
    "vgg19": ModelEntry("VGG19", "vgg19", 224, 512),
    "resnet50": ModelEntry("ResNet50", "resnet50", 224, 2048),
    "inception_v3": ModelEntry("InceptionV3", "inception_v3", 299, 2048),
    "inception_resnet_v2": ModelEntry("InceptionResNetV2", "inception_resnet_v2", 299, 1536),
    "nasnet_large": ModelEntry("NASNetLarge", "nasnet", 331, 4032),
}

SHARED_DIM = 1024  # width of the fine-tuning shared representation layer


def model_entry(name: str) -> ModelEntry:
    key = name.lower().replace("-", "_")
    if key not in REGISTRY:
        raise ValueError(f"unsupported model {name!r}; choose from {sorted(REGISTRY)}")
    return REGISTRY[key]


def preprocess_fn(entry: ModelEntry) -> Callable:
    import tensorflow as tf

    return getattr(tf.keras.applications, entry.preprocess_module).preprocess_input


def build_base(name: str, weights: str = "imagenet", input_size: int | None = None,
               seed: int = 0):
    """Headless backbone (no classifier, no pooling) plus its registry entry.

    `weights` is "imagenet", "random" (seeded fresh initialization, for
    offline use), or a path to a saved weights file.
    """
    import tensorflow as tf

    entry = model_entry(name)
    size = input_size or entry.canonical_size
    builder = getattr(tf.keras.applications, entry.builder_name)
    kwargs = dict(include_top=False, pooling=None, input_shape=(size, size, 3))
    if weights == "random":
        tf.keras.utils.set_random_seed(seed)
        base = builder(weights=None, **kwargs)
    elif weights == "imagenet":
        try:
            base = builder(weights="imagenet", **kwargs)
        except Exception as exc:
            raise WeightsUnavailableError(
                f"pretrained ImageNet weights for {name!r} are not available "
                f"(no network access or cache): {exc}"
            ) from exc
    else:
        base = builder(weights=None, **kwargs)
        try:
            base.load_weights(weights)
        except Exception as exc:
            raise WeightsUnavailableError(
                f"could not load weights file {weights!r}: {exc}"
            ) from exc
    return base, entry


def feature_output(base, layer: str = "pool"):
    """Tensor to extract from: pooled backbone output or a named layer.

    4-d layer outputs are globally average-pooled so every extraction
    point yields one flat vector per image.
    """
    import tensorflow as tf

    if layer == "pool":
        out = base.output
    else:
        try:
            out = base.get_layer(layer).output
        except ValueError:
            raise ValueError(
                f"layer {layer!r} not found; available layers include "
                f"{[l.name for l in base.layers[-5:]]}"
            ) from None
    if len(out.shape) == 4:
        out = tf.keras.layers.GlobalAveragePooling2D(name="extract_pool")(out)
    elif len(out.shape) > 2:
        out = tf.keras.layers.Flatten(name="extract_flatten")(out)
    return out

"""scikit-learn style facade over the hashing pipeline.

fit(X, y) trains the full network, transform(X) emits binary codes as a
(n, code_bits) uint8 array, predict(X) classifies through the prediction
layer, and hash_continuous(X) exposes the pre-binarization activations.
Composes with sklearn Pipelines via BaseEstimator/TransformerMixin.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import LabeledDataset
from .loss import LossConfig
from .model import ModelConfig, model_forward
from .train import TrainConfig, train
from .validation import as_sample_array, check_labels


class RvssdhHasher(BaseEstimator, TransformerMixin):
    """Learned binary image hasher with a random-VLAD aggregation core.

    Parameters
    ----------
    variant : one of "random_vlad", "netvlad", "ssdh_only", "backbone_only".
        Pipeline layout; "random_vlad" is the full hash component.
    input_kind : "image" routes X through the small trainable conv backbone;
        "features" treats X as precomputed (n, H, W, D) feature maps.
    n_clusters : VLAD cluster count K.
    code_bits : hash length L in bits.
    d1, d2 : widths of the two transform layers.
    use_transform : disable to wire the hash layer straight to the VLAD
        output (ablation switch).
    assign_sharpness : initial soft-assignment sharpness alpha0.
    vlad_style : "random" or "netvlad" (normalized, k-means anchors).
    predict_activation : "softmax" (default) or "sigmoid".
    loss_alpha, loss_beta, norm_p, weight_decay, bit_balance_weight :
        objective weights; bit_balance_weight > 0 enables the balance term.
    epochs, batch_size, learning_rate, momentum, lr_decay_epochs :
        SGD schedule.
    validation_fraction : held-out fraction for the per-epoch error log.
    random_state : seed for init and shuffling.
    dtype : "float64" (default) or "float32".
    """

    def __init__(
        self,
        variant="random_vlad",
        input_kind="image",
        n_clusters=8,
        code_bits=32,
        d1=1024,
        d2=1024,
        use_transform=True,
        assign_sharpness=1.0,
        vlad_style="random",
        predict_activation="softmax",
        loss_alpha=1.0,
        loss_beta=1.0,
        norm_p=2,
        weight_decay=5e-4,
        bit_balance_weight=0.0,
        epochs=50,
        batch_size=64,
        learning_rate=0.01,
        momentum=0.9,
        lr_decay_epochs=(40,),
        validation_fraction=0.0,
        random_state=0,
        dtype="float64",
    ):
        self.variant = variant
        self.input_kind = input_kind
        self.n_clusters = n_clusters
        self.code_bits = code_bits
        self.d1 = d1
        self.d2 = d2
        self.use_transform = use_transform
        self.assign_sharpness = assign_sharpness
        self.vlad_style = vlad_style
        self.predict_activation = predict_activation
        self.loss_alpha = loss_alpha
        self.loss_beta = loss_beta
        self.norm_p = norm_p
        self.weight_decay = weight_decay
        self.bit_balance_weight = bit_balance_weight
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_decay_epochs = lr_decay_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.dtype = dtype

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y):
        X = as_sample_array(X, self.input_kind)
        y = check_labels(y, len(X))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        config = ModelConfig(
            variant=self.variant,
            input_shape=tuple(X.shape[1:]),
            input_kind=self.input_kind,
            n_classes=len(self.classes_),
            clusters=self.n_clusters,
            code_bits=self.code_bits,
            d1=self.d1,
            d2=self.d2,
            alpha0=self.assign_sharpness,
            vlad_style=self.vlad_style,
            transform_enabled=self.use_transform,
            predict_activation=self.predict_activation,
            dtype=self.dtype,
        )
        loss_cfg = LossConfig(
            loss_alpha=self.loss_alpha,
            loss_beta=self.loss_beta,
            weight_decay=self.weight_decay,
            p=self.norm_p,
            e3_enabled=self.bit_balance_weight > 0,
            e3_weight=self.bit_balance_weight,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            lr_decay_epochs=tuple(self.lr_decay_epochs),
            seed=self.random_state,
        )
        ds = LabeledDataset(
            samples=X, labels=encoded, n_classes=len(self.classes_), kind=self.input_kind
        )
        val = None
        if self.validation_fraction > 0:
            n_val = max(1, int(round(self.validation_fraction * len(ds))))
            order = np.random.default_rng(np.uint64(self.random_state)).permutation(len(ds))
            val = ds.subset(order[:n_val])
            ds = ds.subset(order[n_val:])
        result = train(ds, config, train_cfg, loss_cfg, val_ds=val)
        self.model_config_ = config
        self.params_ = result.params
        self.history_ = result.log
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this RvssdhHasher instance is not fitted yet")

    def _forward(self, X):
        self._require_fitted()
        X = as_sample_array(X, self.input_kind)
        if X.shape[1:] != tuple(self.model_config_.input_shape):
            raise ValueError(
                f"X sample shape {X.shape[1:]} differs from fitted "
                f"{tuple(self.model_config_.input_shape)}"
            )
        outs = []
        for lo in range(0, len(X), 256):
            outs.append(model_forward(X[lo : lo + 256], self.params_, self.model_config_))
        return outs

    # -- inference ---------------------------------------------------------

    def hash_continuous(self, X) -> np.ndarray:
        """Continuous hash activations in (0, 1), shape (n, code_bits)."""
        outs = self._forward(X)
        if outs[0].h_hat is None:
            raise ValueError(f"variant {self.variant!r} has no hash layer")
        return np.concatenate([o.h_hat for o in outs])

    def transform(self, X) -> np.ndarray:
        """Binary codes as (n, code_bits) uint8 in {0, 1}.

        For the real-valued variants (netvlad / backbone_only) this returns
        the real retrieval vectors instead.
        """
        outs = self._forward(X)
        vecs = np.concatenate([o.codes for o in outs])
        if self.model_config_.code_kind == "real":
            return vecs
        return (vecs >= 0.5).astype(np.uint8)

    def predict_proba(self, X) -> np.ndarray:
        outs = self._forward(X)
        return np.concatenate([o.probs for o in outs])

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def score(self, X, y) -> float:
        """Mean accuracy (1 - top-1 error)."""
        y = np.asarray(y)
        return float(np.mean(self.predict(X) == y))

"""scikit-learn compatible wrappers around the sub-networks and the ensemble.

Samples are stacks of images: a sub-network classifier takes
``X[:, 0]`` (whole face) and ``X[:, 1]`` (region); the ensemble takes
``X[:, 0]`` (whole face) followed by the left-eye, nose and mouth crops.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone

from .ensemble import SUBNET_ORDER, EnsembleWeights, clip_average, ensemble_predict, predict_labels
from .network import ArchSpec
from .preprocess import extract_regions, to_tensor
from .preprocess.pipeline import CROP_ORDER
from .training import PairDataset, TrainConfig, predict_scores, train
from .validation import check_image_stack, check_is_fitted, check_labels


class SubNetworkClassifier(ClassifierMixin, BaseEstimator):
    """One dual-input sub-network trained with momentum SGD.

    Parameters mirror the architecture and optimizer settings; ``n_iter`` is
    the number of mini-batch updates under a linear learning-rate decay.
    """

    def __init__(self, family="alexnet", input_size=32, channel_scale="1/8", fc_widths=None,
                 num_classes=7, region="left_eye", base_lr=0.0005, n_iter=1000, batch_size=16,
                 momentum=0.9, weight_decay=1e-4, augment=False, crop_margin=4, random_state=0):
        self.family = family
        self.input_size = input_size
        self.channel_scale = channel_scale
        self.fc_widths = fc_widths
        self.num_classes = num_classes
        self.region = region
        self.base_lr = base_lr
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augment = augment
        self.crop_margin = crop_margin
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        fc = None if self.fc_widths is None else tuple(self.fc_widths)
        arch = ArchSpec(self.family, self.input_size, self.channel_scale, fc, self.num_classes)
        return TrainConfig(arch, self.region, self.base_lr, self.n_iter, self.batch_size,
                           self.momentum, self.weight_decay, self.augment, self.crop_margin)

    def fit(self, X, y):
        X = check_image_stack(X, 2, self.input_size)
        y = check_labels(y, X.shape[0], self.num_classes)
        result = train(self._config(), PairDataset(X[:, 0], X[:, 1], y), seed=self.random_state)
        self.net_ = result.net
        self.optimizer_ = result.opt
        self.loss_trace_ = result.trace
        self.classes_ = np.arange(self.num_classes)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        X = check_image_stack(X, 2, self.input_size)
        return np.concatenate([self.net_.forward(X[s:s + 64, 0], X[s:s + 64, 1])
                               for s in range(0, X.shape[0], 64)])

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        X = check_image_stack(X, 2, self.input_size)
        return predict_scores(self.net_, X[:, 0], X[:, 1])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[predict_labels(proba)]


class MultiRegionEnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Three sub-networks (left eye, nose, mouth) combined by weighted scores.

    ``weights`` is a preset name (``"vgg"``, ``"alexnet"``), a comma string or
    a 3-sequence in (left_eye, nose, mouth) order. ``estimator`` is the
    template sub-network classifier; it is cloned once per region.
    """

    def __init__(self, estimator=None, weights="vgg"):
        self.estimator = estimator
        self.weights = weights

    def _weights(self) -> EnsembleWeights:
        if isinstance(self.weights, EnsembleWeights):
            return self.weights
        if isinstance(self.weights, str):
            return EnsembleWeights.parse(self.weights)
        return EnsembleWeights(tuple(self.weights))

    def fit(self, X, y):
        base = self.estimator if self.estimator is not None else SubNetworkClassifier()
        X = check_image_stack(X, 4, base.input_size)
        self._weights()
        self.estimators_ = []
        for k, region in enumerate(SUBNET_ORDER, start=1):
            est = clone(base).set_params(region=region)
            est.fit(X[:, [0, k]], y)
            self.estimators_.append(est)
        self.classes_ = self.estimators_[0].classes_
        return self

    def subnet_scores(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "estimators_")
        X = check_image_stack(X, 4, self.estimators_[0].input_size)
        return [est.predict_proba(X[:, [0, k]]) for k, est in enumerate(self.estimators_, start=1)]

    def predict_proba(self, X):
        return ensemble_predict(self.subnet_scores(X), self._weights())

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[predict_labels(proba)]

    def predict_clips(self, X, clip_ids):
        """One label per clip from frame scores averaged within each clip."""
        ids, scores = clip_average(self.predict_proba(X), clip_ids)
        return ids, self.classes_[predict_labels(scores)]


class RegionExtractor(TransformerMixin, BaseEstimator):
    """Turn ``(image, landmarks)`` pairs into aligned four-crop tensor stacks.

    ``transform`` returns an array of shape (N, 4, 3, out_size, out_size) with
    crops in whole-face, left-eye, nose, mouth order.
    """

    def __init__(self, out_size=224, template=None, mean=(0.0, 0.0, 0.0)):
        self.out_size = out_size
        self.template = template
        self.mean = mean

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        stacks = []
        for img, landmarks in X:
            crops = extract_regions(img, landmarks, self.out_size, self.template)
            stacks.append(np.concatenate([to_tensor(crops[name], self.mean) for name in CROP_ORDER]))
        return np.asarray(stacks, dtype=np.float32).reshape(len(stacks), 4, 3, self.out_size, self.out_size)

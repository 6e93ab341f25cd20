"""scikit-learn style front ends for the network, target renderer and parser.

They follow the usual estimator contract (constructor arguments stored
verbatim, ``get_params``/``set_params``, fitted state in trailing-underscore
attributes) so they can be cloned, grid-searched and chained in a
:class:`sklearn.pipeline.Pipeline`::

    pipe = make_pipeline(NADSNet(channel_scale=0.125), SkeletonParser())
    detections = pipe.fit(images).transform(images)
"""

from fractions import Fraction

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import ArchitectureConfig, HeadOutputs, build_graph, count_parameters, forward
from .parsing import ParseConfig, parse_frame
from .targets import TargetConfig, render_targets
from .topology import DEFAULT_TOPOLOGY
from .validation import check_heads, check_image_batch


class NADSNet(TransformerMixin, BaseEstimator):
    """Seeded NADS-Net (or six-stage baseline) forward pass.

    ``fit`` builds the layer graph; there is no training, so ``X`` and ``y``
    are ignored. ``predict``/``transform`` return one :class:`HeadOutputs`
    per image.
    """

    def __init__(self, variant="nads_net", input_size=384, channel_scale=1.0, stage_count=6,
                 upsample_mode="bilinear", head_channels=512, seed=0, topology=None):
        self.variant = variant
        self.input_size = input_size
        self.channel_scale = channel_scale
        self.stage_count = stage_count
        self.upsample_mode = upsample_mode
        self.head_channels = head_channels
        self.seed = seed
        self.topology = topology

    def _config(self):
        return ArchitectureConfig(
            variant=self.variant,
            input_size=self.input_size,
            channel_scale=Fraction(str(self.channel_scale)) if isinstance(self.channel_scale, float)
            else Fraction(self.channel_scale),
            topology=self.topology or DEFAULT_TOPOLOGY,
            stage_count=self.stage_count,
            upsample_mode=self.upsample_mode,
            head_channels=self.head_channels,
        )

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.graph_ = build_graph(self.config_, seed=self.seed)
        self.layer_params_, self.n_parameters_ = count_parameters(self.graph_)
        return self

    def predict(self, X):
        check_is_fitted(self, "graph_")
        batch, single = check_image_batch(X, self.config_.input_size)
        outs = [forward(self.graph_, x) for x in batch]
        return outs[0] if single else outs

    def transform(self, X):
        out = self.predict(X)
        return [out] if isinstance(out, HeadOutputs) else out


class TargetRenderer(TransformerMixin, BaseEstimator):
    """Render keypoint, PAF and seat-belt targets for annotated frames."""

    def __init__(self, sigma=2.0, limb_width=1.5, stride=4, topology=None):
        self.sigma = sigma
        self.limb_width = limb_width
        self.stride = stride
        self.topology = topology

    def fit(self, X=None, y=None):
        self.config_ = TargetConfig(self.sigma, self.limb_width, self.stride)
        self.topology_ = self.topology or DEFAULT_TOPOLOGY
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return [render_targets(frame, self.topology_, self.config_) for frame in X]


class SkeletonParser(TransformerMixin, BaseEstimator):
    """Decode head outputs into :class:`~nadsnet.parsing.FrameDetections`.

    Items of ``X`` are either :class:`HeadOutputs` or ``(image_id, heads)``
    pairs; bare heads get ids ``frame0``, ``frame1``, ...
    """

    def __init__(self, nms_threshold=0.1, nms_window=3, integral_samples=10, paf_point_threshold=0.05,
                 paf_fraction_required=0.8, min_parts=4, min_mean_score=0.2, belt_threshold=0.5,
                 belt_min_area=20, driver_side="right", stride=4, topology=None):
        self.nms_threshold = nms_threshold
        self.nms_window = nms_window
        self.integral_samples = integral_samples
        self.paf_point_threshold = paf_point_threshold
        self.paf_fraction_required = paf_fraction_required
        self.min_parts = min_parts
        self.min_mean_score = min_mean_score
        self.belt_threshold = belt_threshold
        self.belt_min_area = belt_min_area
        self.driver_side = driver_side
        self.stride = stride
        self.topology = topology

    def fit(self, X=None, y=None):
        params = self.get_params()
        self.topology_ = params.pop("topology") or DEFAULT_TOPOLOGY
        params.pop("stride")
        self.config_ = ParseConfig(**params)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        if isinstance(X, HeadOutputs):
            X = [X]
        out = []
        for i, item in enumerate(X):
            image_id, heads = item if isinstance(item, tuple) else (f"frame{i}", item)
            check_heads(heads, self.topology_)
            out.append(parse_frame(heads, self.topology_, self.config_, self.stride, image_id))
        return out

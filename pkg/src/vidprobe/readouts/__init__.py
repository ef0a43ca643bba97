"""Frozen-backbone readout heads: classification, depth, pose, tracking."""

from .common import (CrossAttention, ParamBag, attention_pool, fourier_encode,
                     load_readout, save_readout)
from .attentive import AttentiveHead, attentive_classify
from .depth import DepthHead, depth_decode, latent_grid_queries
from .pose import PoseHead, pose_forward, procrustes_project
from .tracking import (CERT_RADIUS, TrackHead, TrackTargets,
                       point_visibility_decision, track_rollout, tracking_loss)

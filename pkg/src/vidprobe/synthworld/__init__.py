"""Deterministic synthetic 3D scenes with labels for every readout task."""

from .scene import BOX, CONE, KINDS, NEAR_PLANE, SPHERE, Camera, SceneObject
from .render import (GROUND_ID, SKY_ID, cast_rays, intersect, render_frame)
from .generate import (ACTIONS, CAMERA_MOVES, MAX_BOXES, MIN_BOX_AREA_FRAC,
                       N_TRACKS, SceneSample, SceneSpec, Timeline,
                       build_timeline, generate, render_timeline)
from .io import (FORMAT_VERSION, dataset_index, read_dataset, read_sample,
                 spec_hash, write_dataset)

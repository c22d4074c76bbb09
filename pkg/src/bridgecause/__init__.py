"""Bridge damage-cause estimation from SfM poses, a triangle mesh and a VQA oracle."""

from .diagnosis import DEFAULT_RULES, CauseEvidence, CauseRule, DiagnosisReport, diagnose, evaluate_cause, identify_damage_and_member
from .geometry import Hit, Ray, Triangle, TriangleMesh, build_bvh, intersect_triangle, nearest_hit, nearest_hits
from .neighborhood import NeighborhoodSelection, ShootingPoint, select_surrounding, shooting_points
from .scene import CameraPose, Scene, load_scene, parse_mesh_obj, parse_poses
from .vqa import AnnotationOracle, Annotation, Answer, Question, Vocabulary, generate_qa, oracle_answer, render_question

__version__ = "0.1.0"

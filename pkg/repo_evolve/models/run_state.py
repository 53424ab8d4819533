from typing import Dict, List, Optional, TypedDict


class StageManifest(TypedDict):
    stage: str
    config_hash: str
    seed: Optional[int]
    inputs: Dict[str, str]  # file name -> sha256
    outputs: Dict[str, str]


class RunManifest(TypedDict):
    run: str
    mode: str  # simulate | predict | baseline-<name>
    config: Dict
    seed: int
    model_sha256: Optional[str]
    repos: List[str]
    truncated: List[str]

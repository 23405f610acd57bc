"""modelguard: model-file security toolchain.

Safely interprets Pickle and PyTorch model files without executing
embedded code, disarms and reconstructs them (CDR), and protects
trained weights with seeded-permutation Moving Target Defense plus
integrity verification.
"""

from .analyzer import Delta, ScanReport, SeverityLevel, ThreatClass, classify_import, compare_reports, scan
from .cdr import CdrConfig, DisarmReport, DisarmStatus, OutputFormat, disarm_file
from .container import (
    Dtype,
    ModelContainer,
    StateDict,
    TensorSpec,
    extract_state_dict,
    open_container,
    write_container,
    write_safetensors,
)
from .emit import emit_pickle
from .machine import ConstructorRegistry, LoadResult, LoadStatus, PmMode, default_registry, run
from .mtd import (
    AlertEvent,
    AlertKind,
    Mapping,
    MtdPackage,
    SigningKey,
    deobfuscate_tensor,
    is_mtd_protected,
    load,
    obfuscate_tensor,
    protect,
)
from .nodes import BlockedEvent, Disarmed, GlobalRef, PersistentRef, Reduced
from .policy import CallRule, Ruleset, Verdict, builtin_rulesets, check_call, load_ruleset
from .store import DirectoryMappingStore, InMemoryMappingStore, MappingStore, StoreRecord
from .stream import FormatKind, PickleProgram, RawOp, decode_stream, detect_format

__version__ = "0.1.0"

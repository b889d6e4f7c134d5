"""Truss geometry and finite element assembly.

Builds the 5-module laboratory tower (and arbitrary user trusses) as a
pin-jointed 3D truss: columns and diagonal bracings are axial springs,
ceiling plates are rigid lumped masses split equally to their corner
nodes.  Constrained DOFs are eliminated by row/column deletion so the
reduced stiffness matrix stays positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError, ZeroEnergyModeError
from .validation import check_positive

AXES = "xyz"
ELEMENT_CLASSES = ("bracing", "active_column", "passive_column")
COLUMN_CLASSES = ("active_column", "passive_column")


@dataclass(frozen=True, eq=False)
class Node:
    id: int
    xyz: np.ndarray  # (3,) position, m


@dataclass(frozen=True, eq=False)
class Element:
    id: int
    node_a: int
    node_b: int
    cls: str                  # one of ELEMENT_CLASSES
    gamma: float | None = None  # optional per-element spring constant override, N/m


@dataclass(frozen=True, eq=False)
class Plate:
    """Lumped mass patch distributed equally over its nodes."""
    nodes: tuple[int, ...]
    mass: float  # kg


@dataclass(frozen=True, eq=False)
class TrussGeometry:
    nodes: tuple[Node, ...]
    elements: tuple[Element, ...]
    plates: tuple[Plate, ...]
    constrained_dofs: tuple[tuple[int, int], ...]  # (node_id, axis index), fully fixed

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate node ids")
        known = set(ids)
        pairs = set()
        for e in self.elements:
            if e.node_a not in known or e.node_b not in known:
                raise ModelError(f"element {e.id} references unknown node")
            if e.cls not in ELEMENT_CLASSES:
                raise ModelError(f"element {e.id} has unknown class '{e.cls}'")
            pa = self.position(e.node_a)
            pb = self.position(e.node_b)
            if np.linalg.norm(pb - pa) <= 0.0:
                raise ModelError(f"element {e.id} has zero rest length")
            key = frozenset((e.node_a, e.node_b))
            if key in pairs:
                raise ModelError(f"duplicate element over nodes {tuple(sorted(key))}")
            pairs.add(key)
        for p in self.plates:
            if not p.nodes:
                raise ModelError("plate with no nodes")
            for nid in p.nodes:
                if nid not in known:
                    raise ModelError(f"plate references unknown node {nid}")
            if p.mass < 0:
                raise ModelError("plate mass must be >= 0")
        if not self.constrained_dofs:
            raise ModelError("constrained DOF list is empty: structure is not grounded")
        for nid, ax in self.constrained_dofs:
            if nid not in known:
                raise ModelError(f"constraint references unknown node {nid}")
            if ax not in (0, 1, 2):
                raise ModelError(f"constraint axis must be 0..2, got {ax}")

    def position(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return np.asarray(n.xyz, dtype=float)
        raise ModelError(f"unknown node {node_id}")

    @property
    def positions(self):
        return {n.id: np.asarray(n.xyz, dtype=float) for n in self.nodes}


@dataclass(frozen=True)
class StiffnessParams:
    """Class spring constants (N/m) and Rayleigh coefficients."""
    k_b: float = 18200.0        # bracing
    k_ca: float = 19500.0       # active column
    k_cp: float = 22100.0       # passive column
    alpha0: float = 0.05        # 1/s, mass-proportional damping
    alpha1: float = 0.005       # s, stiffness-proportional damping

    def __post_init__(self):
        for name in ("k_b", "k_ca", "k_cp"):
            check_positive(getattr(self, name), name)
        for name in ("alpha0", "alpha1"):
            check_positive(getattr(self, name), name, strict=False)

    def gamma_for(self, element: Element) -> float:
        if element.gamma is not None:
            return float(element.gamma)
        return {"bracing": self.k_b,
                "active_column": self.k_ca,
                "passive_column": self.k_cp}[element.cls]

    def scaled(self, k_b=1.0, k_ca=1.0, k_cp=1.0, alpha0=1.0, alpha1=1.0):
        return StiffnessParams(self.k_b * k_b, self.k_ca * k_ca, self.k_cp * k_cp,
                               self.alpha0 * alpha0, self.alpha1 * alpha1)


@dataclass(frozen=True, eq=False)
class ElementKinematics:
    """Axial-force kinematics of one element.

    ``dof_idx[i, j]`` is the global free-DOF index of endpoint j (0 = a,
    1 = b) along axis i, or -1 when that endpoint DOF is constrained.
    The relative element displacement is d q = q[b] - q[a] with zeros
    substituted for constrained entries.
    """
    element_id: int
    gamma: float        # N/m
    L0: float           # m
    e0: np.ndarray      # (3,) element vector at q = 0
    dof_idx: np.ndarray  # (3, 2) int

    def d_matrix(self, n) -> np.ndarray:
        """Dense difference map d (3 x n) for tests and small models."""
        d = np.zeros((3, n))
        for ax in range(3):
            ia, ib = self.dof_idx[ax]
            if ib >= 0:
                d[ax, ib] += 1.0
            if ia >= 0:
                d[ax, ia] -= 1.0
        return d

    def relative_displacement(self, q) -> np.ndarray:
        out = np.zeros(3)
        for ax in range(3):
            ia, ib = self.dof_idx[ax]
            if ib >= 0:
                out[ax] += q[ib]
            if ia >= 0:
                out[ax] -= q[ia]
        return out


@dataclass(frozen=True, eq=False)
class AssembledModel:
    M: np.ndarray
    K: np.ndarray
    D: np.ndarray
    dof_map: dict          # (node_id, axis) -> global free index
    n: int
    element_kinematics: tuple[ElementKinematics, ...]
    geometry: TrussGeometry
    params: StiffnessParams

    def dof_index(self, node_id, axis) -> int:
        key = (node_id, axis)
        if key not in self.dof_map:
            raise ModelError(f"DOF (node {node_id}, axis '{AXES[axis]}') is "
                             "constrained or does not exist")
        return self.dof_map[key]


def build_scale_model(modules=5, footprint=0.26, module_height=0.40,
                      plate_mass=(6.5, 6.5, 6.5, 6.5, 4.0),
                      active_columns_per_module=(4, 3, 2, 2, 0)) -> TrussGeometry:
    """Generate the laboratory tower geometry.

    Each module contributes 4 corner nodes (numbered counter-clockwise,
    bottom to top), 4 columns and 8 face diagonals; the 4 base nodes are
    fully fixed.  Plate masses are not published for the test structure;
    ``plate_mass`` (scalar or per-module sequence) is a configuration
    value.  The default gives the instrumented modules heavier ceilings
    than the entirely passive top module.
    """
    if modules < 1:
        raise ModelError(f"module count must be >= 1, got {modules}")
    check_positive(footprint, "footprint")
    check_positive(module_height, "module_height")
    if np.isscalar(plate_mass):
        plate_masses = [float(plate_mass)] * modules
    else:
        plate_masses = [float(v) for v in plate_mass]
        if len(plate_masses) < modules:
            plate_masses += [plate_masses[-1]] * (modules - len(plate_masses))
        plate_masses = plate_masses[:modules]
    for v in plate_masses:
        check_positive(v, "plate_mass", strict=False)

    def per_module(seq, what, upper):
        seq = tuple(int(v) for v in seq) if seq is not None else (0,) * modules
        if len(seq) < modules:
            seq = seq + (0,) * (modules - len(seq))
        seq = seq[:modules]
        if any(v < 0 or v > upper for v in seq):
            raise ModelError(f"{what} entries must be in 0..{upper}")
        return seq

    n_act_col = per_module(active_columns_per_module, "active columns per module", 4)

    a = float(footprint)
    corners = [(0.0, 0.0), (a, 0.0), (a, a), (0.0, a)]  # counter-clockwise

    nodes = []
    for level in range(modules + 1):
        z = level * module_height
        for c, (x, y) in enumerate(corners):
            nodes.append(Node(id=4 * level + c + 1, xyz=np.array([x, y, z])))

    elements = []
    eid = 1
    for m in range(1, modules + 1):
        lo = 4 * (m - 1)
        hi = 4 * m
        # columns, corner order
        for c in range(4):
            cls = "active_column" if c < n_act_col[m - 1] else "passive_column"
            elements.append(Element(eid, lo + c + 1, hi + c + 1, cls))
            eid += 1
        # two crossing diagonals per face; active bracings share k_b, the
        # actuation flag is bookkeeping only (see active_element_ids)
        for c in range(4):
            c2 = (c + 1) % 4
            for bottom, top in ((c, c2), (c2, c)):
                elements.append(Element(eid, lo + bottom + 1, hi + top + 1, "bracing"))
                eid += 1

    plates = tuple(
        Plate(nodes=tuple(4 * level + c + 1 for c in range(4)),
              mass=plate_masses[level - 1])
        for level in range(1, modules + 1)
    )
    constrained = tuple((nid, ax) for nid in (1, 2, 3, 4) for ax in range(3))
    geometry = TrussGeometry(tuple(nodes), tuple(elements), plates, constrained)
    return geometry


def active_element_ids(geometry: TrussGeometry,
                       active_columns_per_module=(4, 3, 2, 2, 0),
                       active_bracings_per_module=(8, 6, 4, 2, 0)) -> tuple[int, ...]:
    """Element ids flagged as actuated for the generated tower.

    Columns carry the active/passive class on the element itself;
    bracings are all modeled with k_b, so actuated bracings are the
    first ones per module in listing order.
    """
    ids = []
    per_module = 12
    modules = len(geometry.elements) // per_module
    for m in range(modules):
        block = geometry.elements[m * per_module:(m + 1) * per_module]
        cols = [e for e in block if e.cls in COLUMN_CLASSES]
        brcs = [e for e in block if e.cls == "bracing"]
        ids.extend(e.id for e in cols if e.cls == "active_column")
        n_b = active_bracings_per_module[m] if m < len(active_bracings_per_module) else 0
        ids.extend(e.id for e in brcs[:n_b])
    return tuple(sorted(ids))


def _free_dof_map(geometry: TrussGeometry):
    constrained = set(geometry.constrained_dofs)
    dof_map = {}
    idx = 0
    for node in geometry.nodes:
        for ax in range(3):
            if (node.id, ax) not in constrained:
                dof_map[(node.id, ax)] = idx
                idx += 1
    return dof_map, idx


PLATE_RIGIDITY_FACTOR = 1.0e4  # virtual diaphragm rod stiffness, x max spring k


def stiffness_matrix(geometry: TrussGeometry, params: StiffnessParams,
                     apply_constraints=True,
                     plate_rigidity_factor=PLATE_RIGIDITY_FACTOR):
    """Assemble the truss stiffness matrix from axial springs.

    Plates are rigid bodies in the real structure; with lumped corner
    masses alone the plan square is free to distort in-plane, which
    pollutes the low spectrum with spurious plate-distortion modes.
    Each plate therefore contributes stiff virtual in-plane rods over
    all its node pairs (plate_rigidity_factor times the largest spring
    constant).  Out-of-plane plate bending stays unmodeled, and the
    virtual rods are invisible to gauges and element kinematics.

    With ``apply_constraints=False`` all 3N DOFs are kept (useful for
    nullspace checks); the result is then singular by construction.
    """
    if apply_constraints:
        dof_map, n = _free_dof_map(geometry)
    else:
        dof_map = {(node.id, ax): 3 * i + ax
                   for i, node in enumerate(geometry.nodes) for ax in range(3)}
        n = 3 * len(geometry.nodes)

    K = np.zeros((n, n))
    pos = geometry.positions

    def add_axial(node_a, node_b, gamma):
        pa, pb = pos[node_a], pos[node_b]
        vec = pb - pa
        L0 = float(np.linalg.norm(vec))
        u = vec / L0
        block = gamma * np.outer(u, u)
        idx = [dof_map.get((node_a, ax), -1) for ax in range(3)] + \
              [dof_map.get((node_b, ax), -1) for ax in range(3)]
        sign = [-1.0] * 3 + [1.0] * 3
        for i in range(6):
            if idx[i] < 0:
                continue
            for j in range(6):
                if idx[j] < 0:
                    continue
                K[idx[i], idx[j]] += sign[i] * sign[j] * block[i % 3, j % 3]

    for e in geometry.elements:
        add_axial(e.node_a, e.node_b, params.gamma_for(e))

    if plate_rigidity_factor > 0.0:
        k_plate = plate_rigidity_factor * max(params.k_b, params.k_ca, params.k_cp)
        for p in geometry.plates:
            for i in range(len(p.nodes)):
                for j in range(i + 1, len(p.nodes)):
                    add_axial(p.nodes[i], p.nodes[j], k_plate)
    return K, dof_map, n


def element_kinematics(geometry: TrussGeometry, dof_map,
                       params: StiffnessParams) -> tuple[ElementKinematics, ...]:
    """Per-element rest vector, rest length and DOF difference map."""
    pos = geometry.positions
    out = []
    for e in geometry.elements:
        pa, pb = pos[e.node_a], pos[e.node_b]
        e0 = pb - pa
        L0 = float(np.linalg.norm(e0))
        idx = np.full((3, 2), -1, dtype=int)
        for ax in range(3):
            idx[ax, 0] = dof_map.get((e.node_a, ax), -1)
            idx[ax, 1] = dof_map.get((e.node_b, ax), -1)
        out.append(ElementKinematics(e.id, params.gamma_for(e), L0, e0, idx))
    return tuple(out)


def assemble(geometry: TrussGeometry, params: StiffnessParams,
             element_mass=0.06, include_element_mass=True,
             plate_rigidity_factor=PLATE_RIGIDITY_FACTOR) -> AssembledModel:
    """Assemble mass, stiffness and Rayleigh damping matrices.

    ``element_mass`` (kg, per element, split half to each free endpoint)
    approximates spring/cable self-mass; it is not a published value and
    can be switched off.
    """
    check_positive(element_mass, "element_mass", strict=False)
    K, dof_map, n = stiffness_matrix(geometry, params, apply_constraints=True,
                                     plate_rigidity_factor=plate_rigidity_factor)
    if n == 0:
        raise ModelError("no free DOFs remain after applying constraints")

    m_diag = np.zeros(n)
    for p in geometry.plates:
        share = p.mass / len(p.nodes)
        for nid in p.nodes:
            for ax in range(3):
                idx = dof_map.get((nid, ax), -1)
                if idx >= 0:
                    m_diag[idx] += share
    if include_element_mass and element_mass > 0.0:
        for e in geometry.elements:
            for nid in (e.node_a, e.node_b):
                for ax in range(3):
                    idx = dof_map.get((nid, ax), -1)
                    if idx >= 0:
                        m_diag[idx] += 0.5 * element_mass

    if np.any(m_diag <= 0.0):
        bad = int(np.argmin(m_diag))
        node_id, axis = _dof_name(dof_map, bad)
        raise ModelError(
            f"massless free DOF at node {node_id} axis '{AXES[axis]}'; "
            "add a plate/point mass or enable element self-mass")
    M = np.diag(m_diag)

    # reject mechanisms before any modal work
    evals = np.linalg.eigvalsh(0.5 * (K + K.T))
    if evals[0] <= 1e-9 * max(evals[-1], 1.0):
        w, v = np.linalg.eigh(0.5 * (K + K.T))
        mode = v[:, 0]
        node_id, axis = _dof_name(dof_map, int(np.argmax(np.abs(mode))))
        raise ZeroEnergyModeError(node_id, AXES[axis], float(w[0]))

    D = params.alpha0 * M + params.alpha1 * K
    kin = element_kinematics(geometry, dof_map, params)
    return AssembledModel(M=M, K=K, D=D, dof_map=dof_map, n=n,
                          element_kinematics=kin, geometry=geometry, params=params)


def _dof_name(dof_map, idx):
    for (node_id, axis), i in dof_map.items():
        if i == idx:
            return node_id, axis
    raise KeyError(idx)


# ---------------------------------------------------------------------------
# model description files (schema 1)

MODEL_SCHEMA = 1


def geometry_to_dict(geometry: TrussGeometry, params: StiffnessParams | None = None,
                     element_mass=0.06, include_element_mass=True) -> dict:
    doc = {
        "model_schema": MODEL_SCHEMA,
        "nodes": [{"id": int(n.id), "xyz_m": [float(v) for v in n.xyz]}
                  for n in geometry.nodes],
        "elements": [
            {"id": int(e.id), "nodes": [int(e.node_a), int(e.node_b)],
             "class": e.cls,
             **({"gamma_n_per_m": float(e.gamma)} if e.gamma is not None else {})}
            for e in geometry.elements],
        "plates": [{"nodes": [int(v) for v in p.nodes], "mass_kg": float(p.mass)}
                   for p in geometry.plates],
        "constraints": _constraints_to_doc(geometry.constrained_dofs),
        "element_mass_kg": float(element_mass),
        "include_element_mass": bool(include_element_mass),
    }
    if params is not None:
        doc["stiffness"] = {
            "k_b_n_per_m": params.k_b, "k_ca_n_per_m": params.k_ca,
            "k_cp_n_per_m": params.k_cp,
            "alpha0_per_s": params.alpha0, "alpha1_s": params.alpha1,
        }
    return doc


def _constraints_to_doc(constrained):
    by_node = {}
    for nid, ax in constrained:
        by_node.setdefault(nid, []).append(ax)
    return [{"node": int(nid), "axes": "".join(AXES[a] for a in sorted(axes))}
            for nid, axes in sorted(by_node.items())]


def geometry_from_dict(doc: dict):
    """Parse a model description document.

    Returns (geometry, params, element_mass, include_element_mass).
    Accepts either an explicit node/element listing or a ``scale_model``
    generator block.
    """
    if doc.get("model_schema") != MODEL_SCHEMA:
        raise ModelError(f"unsupported model_schema {doc.get('model_schema')!r}, "
                         f"expected {MODEL_SCHEMA}")
    stiff = doc.get("stiffness", {})
    params = StiffnessParams(
        k_b=float(stiff.get("k_b_n_per_m", 18200.0)),
        k_ca=float(stiff.get("k_ca_n_per_m", 19500.0)),
        k_cp=float(stiff.get("k_cp_n_per_m", 22100.0)),
        alpha0=float(stiff.get("alpha0_per_s", 0.05)),
        alpha1=float(stiff.get("alpha1_s", 0.005)),
    )
    element_mass = float(doc.get("element_mass_kg", 0.06))
    include_element_mass = bool(doc.get("include_element_mass", True))

    if "scale_model" in doc:
        sm = doc["scale_model"]
        geometry = build_scale_model(
            modules=int(sm.get("modules", 5)),
            footprint=float(sm.get("footprint_m", 0.26)),
            module_height=float(sm.get("module_height_m", 0.40)),
            plate_mass=float(sm.get("plate_mass_kg", 4.0)),
            active_columns_per_module=sm.get("active_columns_per_module", (4, 3, 2, 2, 0)),
        )
        return geometry, params, element_mass, include_element_mass

    try:
        nodes = tuple(Node(int(n["id"]), np.array([float(v) for v in n["xyz_m"]]))
                      for n in doc["nodes"])
        elements = tuple(
            Element(int(e["id"]), int(e["nodes"][0]), int(e["nodes"][1]), e["class"],
                    gamma=(float(e["gamma_n_per_m"]) if "gamma_n_per_m" in e else None))
            for e in doc["elements"])
        plates = tuple(Plate(tuple(int(v) for v in p["nodes"]), float(p["mass_kg"]))
                       for p in doc.get("plates", []))
        constrained = tuple((int(c["node"]), AXES.index(a))
                            for c in doc["constraints"] for a in c["axes"])
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelError(f"malformed model description: {exc!r}") from exc
    geometry = TrussGeometry(nodes, elements, plates, constrained)
    return geometry, params, element_mass, include_element_mass


def load_model_file(path):
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ModelError(f"model file {path} did not parse to a mapping")
    return geometry_from_dict(doc)


def save_model_file(path, geometry, params=None, element_mass=0.06,
                    include_element_mass=True):
    import yaml

    doc = geometry_to_dict(geometry, params, element_mass, include_element_mass)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)

"""Triangle meshes of planar domains, face (edge) topology, and file I/O.

Meshes are conforming triangulations with counterclockwise connectivity.
Boundary faces carry string tags (the rectangle builder uses 'left',
'right', 'bottom', 'top').  A `Mesh` is immutable after construction and
safe to share across threads.

The ASCII mesh format is line oriented:

    ns-mesh 1
    <nvertices>
    x y                (one line per vertex)
    <ntriangles>
    i j k              (0-based CCW vertex indices)
    b vA vB tag        (optional boundary tag lines)
"""

import numpy as np


class Mesh:
    """Conforming triangle mesh.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_tags : dict mapping sorted vertex pairs (a, b) to a tag string
    h_max : float, largest edge length
    """

    def __init__(self, vertices, triangles, boundary_tags=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be a (V, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be a (T, 3) array")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle vertex index out of range")
        a = self.signed_areas()
        if np.any(a <= 0.0):
            bad = int(np.argmin(a))
            raise ValueError(
                f"triangle {bad} has non-positive area {a[bad]:.3e}; "
                "connectivity must be counterclockwise")
        self.boundary_tags = dict(boundary_tags or {})
        e = self.vertices[self.triangles]
        lengths = np.linalg.norm(
            e - e[:, [1, 2, 0], :], axis=2)
        self.h_max = float(lengths.max()) if lengths.size else 0.0
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def triangle_vertices(self, t):
        return self.vertices[self.triangles[t]]


def build_rect_mesh(x0, x1, y0, y1, nx, ny):
    """Uniform triangulation of the rectangle [x0,x1] x [y0,y1].

    Each of the nx*ny cells is split along its lower-left to upper-right
    diagonal into two triangles, so h_max is the cell diagonal.
    """
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle extents must satisfy x1 > x0 and y1 > y0")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    tris = []
    for iy in range(ny):
        for ix in range(nx):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tags = {}
    for iy in range(ny):
        tags[_key(vid(0, iy), vid(0, iy + 1))] = 'left'
        tags[_key(vid(nx, iy), vid(nx, iy + 1))] = 'right'
    for ix in range(nx):
        tags[_key(vid(ix, 0), vid(ix + 1, 0))] = 'bottom'
        tags[_key(vid(ix, ny), vid(ix + 1, ny))] = 'top'
    return Mesh(vertices, np.array(tris), tags)


def _key(a, b):
    return (a, b) if a < b else (b, a)


class FaceTopology:
    """Faces (edges) of a mesh with orientation data for DG assembly.

    Interior faces store the two adjacent triangles as (elem_plus,
    elem_minus) with elem_plus the lower triangle index; the unit normal
    points from plus to minus.  Boundary faces store the single adjacent
    triangle in elem_plus, elem_minus = -1, an outward normal and a tag.

    Attributes (all parallel arrays over faces)
    -------------------------------------------
    va, vb : endpoint vertex ids, directed so the normal is the right-hand
        rotation of the tangent vb - va
    elem_plus, elem_minus : adjacent triangle ids
    normal : (F, 2) unit normals
    h_f : (F,) face lengths
    tags : list of tag strings ('' for interior faces)
    interior, boundary : index arrays into the face list
    cell_faces : (T, 3) face ids per triangle, in local edge order
    cell_face_sign : (T, 3) +1 where the triangle is the plus side
    """

    def __init__(self, mesh):
        edges = {}
        for t, (i, j, k) in enumerate(mesh.triangles):
            for a, b in ((i, j), (j, k), (k, i)):
                key = _key(int(a), int(b))
                rec = edges.setdefault(key, [])
                rec.append((t, int(a), int(b)))
        va, vb, ep, em, tags = [], [], [], [], []
        face_id = {}
        for key in sorted(edges):
            rec = edges[key]
            if len(rec) > 2:
                raise ValueError(
                    f"edge {key} is shared by {len(rec)} triangles; "
                    "mesh is not manifold")
            if len(rec) == 2:
                (t0, a0, b0), (t1, a1, b1) = rec
                if (a0, b0) == (a1, b1):
                    raise ValueError(
                        f"edge {key} is traversed twice in the same direction; "
                        "inconsistent triangle orientation")
                if t0 == t1:
                    raise ValueError(f"triangle {t0} repeats edge {key}")
                # plus side is the lower triangle index
                if t1 < t0:
                    (t0, a0, b0), (t1, a1, b1) = (t1, a1, b1), (t0, a0, b0)
                face_id[key] = len(va)
                va.append(a0)
                vb.append(b0)
                ep.append(t0)
                em.append(t1)
                tags.append('')
            else:
                (t0, a0, b0) = rec[0]
                face_id[key] = len(va)
                va.append(a0)
                vb.append(b0)
                ep.append(t0)
                em.append(-1)
                tags.append(mesh.boundary_tags.get(key, 'boundary'))
        self.mesh = mesh
        self.va = np.array(va, dtype=np.int64)
        self.vb = np.array(vb, dtype=np.int64)
        self.elem_plus = np.array(ep, dtype=np.int64)
        self.elem_minus = np.array(em, dtype=np.int64)
        self.tags = tags
        tang = mesh.vertices[self.vb] - mesh.vertices[self.va]
        self.h_f = np.linalg.norm(tang, axis=1)
        # right-hand rotation of the tangent: outward from the plus element
        self.normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.h_f[:, None]
        self.interior = np.flatnonzero(self.elem_minus >= 0)
        self.boundary = np.flatnonzero(self.elem_minus < 0)
        cf = np.empty((mesh.n_triangles, 3), dtype=np.int64)
        cs = np.empty((mesh.n_triangles, 3), dtype=np.int64)
        for t, (i, j, k) in enumerate(mesh.triangles):
            for loc, (a, b) in enumerate(((i, j), (j, k), (k, i))):
                f = face_id[_key(int(a), int(b))]
                cf[t, loc] = f
                cs[t, loc] = 1 if self.elem_plus[f] == t else -1
        self.cell_faces = cf
        self.cell_face_sign = cs

    @property
    def n_faces(self):
        return len(self.va)

    @property
    def n_interior(self):
        return len(self.interior)

    @property
    def n_boundary(self):
        return len(self.boundary)


def extract_faces(mesh):
    """Build the `FaceTopology` of a mesh."""
    return FaceTopology(mesh)


def write_mesh(mesh, path):
    """Write a mesh in the ns-mesh 1 ASCII format."""
    lines = ["ns-mesh 1", str(mesh.n_vertices)]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(str(mesh.n_triangles))
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for (a, b), tag in sorted(mesh.boundary_tags.items()):
        lines.append(f"b {a} {b} {tag}")
    with open(path, 'w') as fh:
        fh.write("\n".join(lines) + "\n")


def mesh_from_file(path):
    """Read a mesh in the ns-mesh 1 ASCII format, validating as it goes.

    Errors carry the 1-based line number of the offending record.
    """
    with open(path) as fh:
        raw = fh.read().splitlines()

    def err(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    lines = [(n + 1, s.strip()) for n, s in enumerate(raw)
             if s.strip() and not s.strip().startswith('#')]
    if not lines or lines[0][1] != "ns-mesh 1":
        err(lines[0][0] if lines else 1, "expected header 'ns-mesh 1'")
    pos = 1

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            err(len(raw) + 1, f"unexpected end of file, expected {what}")
        rec = lines[pos]
        pos += 1
        return rec

    lineno, s = take("vertex count")
    try:
        nv = int(s)
    except ValueError:
        err(lineno, f"expected vertex count, got {s!r}")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, s = take("vertex coordinates")
        parts = s.split()
        if len(parts) != 2:
            err(lineno, f"expected 'x y', got {s!r}")
        try:
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            err(lineno, f"bad vertex coordinates {s!r}")
    lineno, s = take("triangle count")
    try:
        nt = int(s)
    except ValueError:
        err(lineno, f"expected triangle count, got {s!r}")
    tris = np.empty((nt, 3), dtype=np.int64)
    tri_lines = []
    for i in range(nt):
        lineno, s = take("triangle connectivity")
        parts = s.split()
        if len(parts) != 3:
            err(lineno, f"expected 'i j k', got {s!r}")
        try:
            tri = [int(p) for p in parts]
        except ValueError:
            err(lineno, f"bad triangle indices {s!r}")
        for v in tri:
            if v < 0 or v >= nv:
                err(lineno, f"vertex index {v} out of range 0..{nv - 1}")
        tris[i] = tri
        tri_lines.append(lineno)
    tags = {}
    while pos < len(lines):
        lineno, s = take("boundary tag")
        parts = s.split()
        if len(parts) != 4 or parts[0] != 'b':
            err(lineno, f"expected 'b vA vB tag', got {s!r}")
        try:
            a, b = int(parts[1]), int(parts[2])
        except ValueError:
            err(lineno, f"bad boundary vertex indices {s!r}")
        for v in (a, b):
            if v < 0 or v >= nv:
                err(lineno, f"vertex index {v} out of range 0..{nv - 1}")
        tags[_key(a, b)] = parts[3]
    # validate areas with line-number context before handing to Mesh
    for i in range(nt):
        p = verts[tris[i]]
        area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                      - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
        if area <= 0.0:
            err(tri_lines[i],
                f"triangle {i} has non-positive area {area:.3e}")
    return Mesh(verts, tris, tags)

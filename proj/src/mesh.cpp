#include "dualpose/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dualpose {

Mesh::Mesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::string name)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), name_(std::move(name)) {
  const int n = vertex_count();
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& face = faces_[f];
    for (int idx : face) {
      if (idx < 0 || idx >= n) {
        throw MeshError("face " + std::to_string(f) + ": index out of range (" +
                        std::to_string(idx) + " with " + std::to_string(n) + " vertices)");
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw MeshError("face " + std::to_string(f) + " repeats a vertex index");
    }
  }
}

Mesh Mesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw MeshError("with_vertices: vertex count mismatch");
  }
  Mesh out;
  out.vertices_ = std::move(vertices);
  out.faces_ = faces_;
  out.name_ = name_;
  return out;
}

VertexPermutation VertexPermutation::identity(int n) {
  std::vector<int> fwd(static_cast<std::size_t>(n));
  std::iota(fwd.begin(), fwd.end(), 0);
  return from_forward(std::move(fwd));
}

VertexPermutation VertexPermutation::from_forward(std::vector<int> forward) {
  VertexPermutation p;
  p.inverse.assign(forward.size(), -1);
  for (std::size_t i = 0; i < forward.size(); ++i) {
    const int old = forward[i];
    if (old < 0 || old >= static_cast<int>(forward.size()) || p.inverse[old] != -1) {
      throw MeshError("not a permutation");
    }
    p.inverse[old] = static_cast<int>(i);
  }
  p.forward = std::move(forward);
  return p;
}

void EdgeWeights::add(int i, int j, double w) {
  entries_[{std::min(i, j), std::max(i, j)}] += w;
}

double EdgeWeights::at(int i, int j) const {
  auto it = entries_.find({std::min(i, j), std::max(i, j)});
  if (it == entries_.end()) throw MeshError("no edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  return it->second;
}

bool EdgeWeights::contains(int i, int j) const {
  return entries_.count({std::min(i, j), std::max(i, j)}) > 0;
}

namespace {

// OBJ face token "a", "a/b", "a/b/c" or "a//c"; returns the position index.
int parse_face_index(const std::string& token, int vertex_count, int line_no) {
  const std::string head = token.substr(0, token.find('/'));
  long value = 0;
  try {
    std::size_t used = 0;
    value = std::stol(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw MeshError("line " + std::to_string(line_no) + ": parse failure in face token '" + token + "'");
  }
  if (value < 0) value = vertex_count + value + 1;  // relative index
  if (value < 1 || value > vertex_count) {
    throw MeshError("line " + std::to_string(line_no) + ": index out of range (" + token + ")");
  }
  return static_cast<int>(value - 1);
}

}  // namespace

Mesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open " + path);

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) {
        throw MeshError("line " + std::to_string(line_no) + ": parse failure in vertex record");
      }
      vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      for (std::string t; ss >> t;) tokens.push_back(t);
      if (tokens.size() != 3) {
        throw MeshError("line " + std::to_string(line_no) + ": non-triangular face (" +
                        std::to_string(tokens.size()) + " vertices)");
      }
      Face f{};
      for (int k = 0; k < 3; ++k) {
        f[k] = parse_face_index(tokens[k], static_cast<int>(vertices.size()), line_no);
      }
      faces.push_back(f);
    }
    // vn, vt, g, o, s, usemtl, mtllib are ignored
  }
  std::string stem = path;
  if (auto slash = stem.find_last_of('/'); slash != std::string::npos) stem = stem.substr(slash + 1);
  if (auto dot = stem.rfind('.'); dot != std::string::npos) stem = stem.substr(0, dot);
  return Mesh(std::move(vertices), std::move(faces), stem);
}

void save_obj(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write " + path);
  out << std::setprecision(9);
  for (const Vec3& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw MeshError("write failed: " + path);
}

void save_ply_lines(const std::vector<ColoredPoint>& points,
                    const std::vector<std::pair<int, int>>& lines,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write " + path);
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << points.size() << '\n'
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "element edge " << lines.size() << '\n'
      << "property int vertex1\nproperty int vertex2\n"
      << "end_header\n";
  out << std::setprecision(9);
  for (const auto& p : points) {
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' '
        << int(p.color[0]) << ' ' << int(p.color[1]) << ' ' << int(p.color[2]) << '\n';
  }
  for (const auto& [a, b] : lines) out << a << ' ' << b << '\n';
  if (!out) throw MeshError("write failed: " + path);
}

Mesh center_by_bbox(const Mesh& mesh) {
  if (mesh.vertices().empty()) return mesh;
  Vec3 lo = mesh.vertices().front();
  Vec3 hi = lo;
  for (const Vec3& v : mesh.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  std::vector<Vec3> out = mesh.vertices();
  for (Vec3& v : out) v -= center;
  return mesh.with_vertices(std::move(out));
}

Mesh apply_permutation(const Mesh& mesh, const VertexPermutation& perm) {
  if (perm.size() != mesh.vertex_count()) throw MeshError("permutation size mismatch");
  std::vector<Vec3> vertices(mesh.vertices().size());
  for (int i = 0; i < perm.size(); ++i) vertices[i] = mesh.vertices()[perm.forward[i]];
  std::vector<Face> faces = mesh.faces();
  for (Face& f : faces) {
    for (int& idx : f) idx = perm.inverse[idx];
  }
  return Mesh(std::move(vertices), std::move(faces), mesh.name());
}

Mesh invert_permutation(const Mesh& mesh, const VertexPermutation& perm) {
  return apply_permutation(mesh, VertexPermutation::from_forward(perm.inverse));
}

std::pair<Mesh, VertexPermutation> shuffle_vertices(const Mesh& mesh, std::uint64_t seed) {
  std::vector<int> fwd(static_cast<std::size_t>(mesh.vertex_count()));
  std::iota(fwd.begin(), fwd.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(fwd.begin(), fwd.end(), rng);
  auto perm = VertexPermutation::from_forward(std::move(fwd));
  Mesh shuffled = apply_permutation(mesh, perm);
  return {std::move(shuffled), std::move(perm)};
}

std::vector<std::pair<int, int>> unique_edges(const Mesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  return {edges.begin(), edges.end()};
}

std::vector<std::vector<int>> adjacency(const Mesh& mesh) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(mesh.vertex_count()));
  for (const auto& [a, b] : unique_edges(mesh)) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& ring : adj) std::sort(ring.begin(), ring.end());
  return adj;
}

std::vector<int> one_ring(const Mesh& mesh, int i) {
  if (i < 0 || i >= mesh.vertex_count()) throw MeshError("one_ring: invalid vertex " + std::to_string(i));
  std::set<int> ring;
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      if (f[k] == i) {
        ring.insert(f[(k + 1) % 3]);
        ring.insert(f[(k + 2) % 3]);
      }
    }
  }
  return {ring.begin(), ring.end()};
}

EdgeWeights cotangent_weights(const Mesh& mesh) {
  EdgeWeights weights;
  const auto& V = mesh.vertices();
  for (std::size_t f = 0; f < mesh.faces().size(); ++f) {
    const Face& face = mesh.faces()[f];
    const Vec3 e1 = V[face[1]] - V[face[0]];
    const Vec3 e2 = V[face[2]] - V[face[0]];
    const double area2 = e1.cross(e2).norm();
    const double scale = std::max({e1.squaredNorm(), e2.squaredNorm(), (e2 - e1).squaredNorm()});
    if (!(area2 > 1e-12 * scale)) {
      throw MeshError("degenerate face " + std::to_string(f) + " (zero area)");
    }
    for (int k = 0; k < 3; ++k) {
      // angle at face[k] is opposite edge (face[k+1], face[k+2])
      const int o = face[k];
      const int a = face[(k + 1) % 3];
      const int b = face[(k + 2) % 3];
      const Vec3 ea = V[a] - V[o];
      const Vec3 eb = V[b] - V[o];
      const double cot = ea.dot(eb) / ea.cross(eb).norm();
      weights.add(a, b, 0.5 * cot);
    }
  }
  return weights;
}

}  // namespace dualpose

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dualpose {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Triangle mesh with double-precision vertex coordinates.
///
/// Construction validates face indices; the value is immutable afterwards
/// except through the free functions below, which return new meshes.
class Mesh {
 public:
  Mesh() = default;
  Mesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::string name = {});

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::string& name() const { return name_; }

  int vertex_count() const { return static_cast<int>(vertices_.size()); }
  int face_count() const { return static_cast<int>(faces_.size()); }

  /// Same faces and name, new coordinates.
  Mesh with_vertices(std::vector<Vec3> vertices) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::string name_;
};

/// Relabeling of vertex indices. new index i holds old vertex forward[i].
struct VertexPermutation {
  std::vector<int> forward;
  std::vector<int> inverse;

  static VertexPermutation identity(int n);
  static VertexPermutation from_forward(std::vector<int> forward);
  int size() const { return static_cast<int>(forward.size()); }
};

/// Sparse symmetric per-edge weights keyed by (min, max) vertex pair.
class EdgeWeights {
 public:
  void add(int i, int j, double w);
  double at(int i, int j) const;
  bool contains(int i, int j) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::pair<int, int>, double>& entries() const { return entries_; }

 private:
  std::map<std::pair<int, int>, double> entries_;
};

Mesh load_obj(const std::string& path);
void save_obj(const Mesh& mesh, const std::string& path);

/// ASCII PLY with per-vertex colors and an optional edge list.
struct ColoredPoint {
  Vec3 position;
  std::array<std::uint8_t, 3> color;
};
void save_ply_lines(const std::vector<ColoredPoint>& points,
                    const std::vector<std::pair<int, int>>& lines,
                    const std::string& path);

Mesh center_by_bbox(const Mesh& mesh);
std::pair<Mesh, VertexPermutation> shuffle_vertices(const Mesh& mesh, std::uint64_t seed);
Mesh apply_permutation(const Mesh& mesh, const VertexPermutation& perm);
Mesh invert_permutation(const Mesh& mesh, const VertexPermutation& perm);

/// Undirected edges (i < j) in ascending order.
std::vector<std::pair<int, int>> unique_edges(const Mesh& mesh);

/// Per-vertex sorted one-ring neighbor lists.
std::vector<std::vector<int>> adjacency(const Mesh& mesh);
std::vector<int> one_ring(const Mesh& mesh, int i);

/// w_ij = 1/2 (cot alpha + cot beta) over the angles opposite each edge.
/// Throws MeshError on a zero-area face.
EdgeWeights cotangent_weights(const Mesh& mesh);

}  // namespace dualpose

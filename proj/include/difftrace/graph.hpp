#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace difftrace {

class InfluenceMatrix;

/// Hop count returned by hop_distance for nodes in different components.
constexpr int kUnreachable = std::numeric_limits<int>::max();

/// Undirected simple graph with contiguous node ids 0..|V|-1.
/// Immutable after construction; safe for concurrent reads.
class Graph {
public:
    Graph() = default;
    Graph(int node_count, std::vector<std::pair<int, int>> edges,
          std::vector<std::int64_t> original_ids = {});

    int node_count() const { return node_count_; }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }
    const std::vector<int>& neighbors(int v) const;
    int degree(int v) const { return static_cast<int>(neighbors(v).size()); }
    bool has_edge(int u, int v) const;

    // external id that a contiguous id was remapped from
    const std::vector<std::int64_t>& original_ids() const { return original_ids_; }

    // content hash over node count + sorted edge set; stable across runs
    std::string checksum() const;

    std::vector<int> connected_component(int v) const;
    std::vector<int> largest_component() const;

private:
    void check_node(int v) const;

    int node_count_ = 0;
    std::vector<std::pair<int, int>> edges_;          // u < v, deduplicated
    std::vector<std::vector<int>> adjacency_;         // sorted neighbor lists
    std::vector<std::int64_t> original_ids_;
};

/// Reads a SNAP-style edge list: one "u v" pair per line, '#' comments,
/// external ids remapped to contiguous ints in first-seen order.
/// Self-loops dropped, duplicate edges collapsed.
Graph load_edge_list(const std::string& path);

/// D^{-1/2} (A + I + W) D^{-1/2} with D the row-sum diagonal of the sum.
/// W contributes learned edge weights and may be asymmetric; pass null
/// for the plain A + I normalization.
Eigen::MatrixXd normalized_adjacency(const Graph& g, const InfluenceMatrix* w = nullptr);

/// BFS hop count between u and v; kUnreachable if disconnected.
int hop_distance(const Graph& g, int u, int v);

/// Hop counts from src to every node (kUnreachable where disconnected).
std::vector<int> bfs_hops(const Graph& g, int src);

}  // namespace difftrace

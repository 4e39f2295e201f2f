#include "difftrace/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "difftrace/influence.hpp"
#include "difftrace/serialize.hpp"

namespace difftrace {

Graph::Graph(int node_count, std::vector<std::pair<int, int>> edges,
             std::vector<std::int64_t> original_ids)
    : node_count_(node_count), original_ids_(std::move(original_ids)) {
    if (node_count <= 0) throw std::invalid_argument("Graph: node_count must be positive");
    std::set<std::pair<int, int>> dedup;
    for (auto [u, v] : edges) {
        if (u < 0 || u >= node_count || v < 0 || v >= node_count)
            throw std::invalid_argument("Graph: edge endpoint out of range");
        if (u == v) continue;
        dedup.emplace(std::min(u, v), std::max(u, v));
    }
    edges_.assign(dedup.begin(), dedup.end());
    adjacency_.resize(node_count_);
    for (auto [u, v] : edges_) {
        adjacency_[u].push_back(v);
        adjacency_[v].push_back(u);
    }
    for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
    if (original_ids_.empty()) {
        original_ids_.resize(node_count_);
        for (int i = 0; i < node_count_; ++i) original_ids_[i] = i;
    }
    if (static_cast<int>(original_ids_.size()) != node_count_)
        throw std::invalid_argument("Graph: original_ids size mismatch");
}

void Graph::check_node(int v) const {
    if (v < 0 || v >= node_count_)
        throw std::invalid_argument("invalid node id " + std::to_string(v));
}

const std::vector<int>& Graph::neighbors(int v) const {
    check_node(v);
    return adjacency_[v];
}

bool Graph::has_edge(int u, int v) const {
    check_node(u);
    check_node(v);
    const auto& nbrs = adjacency_[u];
    return std::binary_search(nbrs.begin(), nbrs.end(), v);
}

std::string Graph::checksum() const {
    std::ostringstream os;
    os << "n=" << node_count_ << ';';
    for (auto [u, v] : edges_) os << u << '-' << v << ';';
    return to_hex(fnv1a64(os.str()));
}

std::vector<int> Graph::connected_component(int v) const {
    check_node(v);
    std::vector<char> seen(node_count_, 0);
    std::deque<int> queue{v};
    seen[v] = 1;
    std::vector<int> comp;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        comp.push_back(u);
        for (int w : adjacency_[u])
            if (!seen[w]) {
                seen[w] = 1;
                queue.push_back(w);
            }
    }
    std::sort(comp.begin(), comp.end());
    return comp;
}

std::vector<int> Graph::largest_component() const {
    std::vector<char> seen(node_count_, 0);
    std::vector<int> best;
    for (int v = 0; v < node_count_; ++v) {
        if (seen[v]) continue;
        auto comp = connected_component(v);
        for (int u : comp) seen[u] = 1;
        if (comp.size() > best.size()) best = std::move(comp);
    }
    return best;
}

Graph load_edge_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open edge list: " + path);

    std::unordered_map<std::int64_t, int> id_map;
    std::vector<std::int64_t> original_ids;
    std::vector<std::pair<int, int>> edges;
    std::string line;
    int line_no = 0;

    auto intern = [&](std::int64_t ext) {
        auto it = id_map.find(ext);
        if (it != id_map.end()) return it->second;
        int id = static_cast<int>(original_ids.size());
        id_map.emplace(ext, id);
        original_ids.push_back(ext);
        return id;
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::size_t first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        if (line[first] == '#') continue;
        std::istringstream iss(line);
        std::int64_t a, b;
        std::string extra;
        if (!(iss >> a >> b) || (iss >> extra))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed edge line: \"" + line + "\"");
        if (a == b) continue;  // self-loop
        const int u = intern(a);
        const int v = intern(b);
        edges.emplace_back(u, v);
    }
    if (original_ids.empty())
        throw std::runtime_error(path + ": empty graph after cleaning");
    const int node_count = static_cast<int>(original_ids.size());
    return Graph(node_count, std::move(edges), std::move(original_ids));
}

Eigen::MatrixXd normalized_adjacency(const Graph& g, const InfluenceMatrix* w) {
    const int n = g.node_count();
    if (w && w->node_count() != n)
        throw std::invalid_argument("normalized_adjacency: influence matrix size mismatch");
    Eigen::MatrixXd a_hat = Eigen::MatrixXd::Identity(n, n);
    for (auto [u, v] : g.edges()) {
        a_hat(u, v) += 1.0;
        a_hat(v, u) += 1.0;
    }
    if (w) {
        for (const auto& t : w->triplets()) a_hat(t.row, t.col) += t.value;
    }
    Eigen::VectorXd d = a_hat.rowwise().sum();
    Eigen::VectorXd d_inv_sqrt(n);
    for (int i = 0; i < n; ++i) {
        // the +I term keeps every row sum >= 1
        if (!(d(i) > 0.0)) throw std::logic_error("normalized_adjacency: zero row sum");
        d_inv_sqrt(i) = 1.0 / std::sqrt(d(i));
    }
    return d_inv_sqrt.asDiagonal() * a_hat * d_inv_sqrt.asDiagonal();
}

std::vector<int> bfs_hops(const Graph& g, int src) {
    std::vector<int> dist(g.node_count(), kUnreachable);
    std::deque<int> queue{src};
    dist[src] = 0;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (int v : g.neighbors(u))
            if (dist[v] == kUnreachable) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
    }
    return dist;
}

int hop_distance(const Graph& g, int u, int v) {
    if (u == v) {
        g.neighbors(u);  // validates the id
        return 0;
    }
    g.neighbors(v);
    return bfs_hops(g, u)[v];
}

}  // namespace difftrace

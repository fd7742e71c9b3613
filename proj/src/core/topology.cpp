#include "dst/topology.hpp"

#include <algorithm>
#include <sstream>

#include "dst/error.hpp"

namespace dst {

ValidationReport validate(const std::vector<NodeSpec>& nodes) {
  ValidationReport report;
  const std::size_t n = nodes.size();
  if (n == 0) {
    report.push_back({0, "topology has no nodes"});
    return report;
  }

  std::vector<std::size_t> child_count(n, 0);
  std::vector<NodeId> roots;
  for (NodeId id = 0; id < n; ++id) {
    const NodeSpec& node = nodes[id];
    if (node.num_states < 1) report.push_back({id, "num_states must be positive"});
    if (node.kind == NodeKind::Aggregator) {
      if (node.x_dim != 0 || node.y_dim != 0)
        report.push_back({id, "aggregator must not carry x_dim/y_dim"});
    } else {
      if (node.x_dim < 1) report.push_back({id, "leaf x_dim must be >= 1"});
      if (node.y_dim < 1) report.push_back({id, "leaf y_dim must be >= 1"});
    }
    if (!node.parent) {
      roots.push_back(id);
    } else if (*node.parent >= n) {
      report.push_back({id, "parent id out of range"});
    } else if (*node.parent == id) {
      report.push_back({id, "node is its own parent"});
    } else {
      ++child_count[*node.parent];
    }
  }

  if (roots.empty()) {
    report.push_back({0, "no root node (every node has a parent)"});
  } else if (roots.size() > 1) {
    for (std::size_t r = 1; r < roots.size(); ++r)
      report.push_back({roots[r], "more than one root node"});
  } else {
    const NodeId root = roots.front();
    if (nodes[root].kind == NodeKind::Leaf && n > 1)
      report.push_back({root, "root must be an aggregator unless the topology is a single leaf"});
  }

  for (NodeId id = 0; id < n; ++id) {
    if (nodes[id].kind == NodeKind::Aggregator && child_count[id] == 0)
      report.push_back({id, "aggregator has no children"});
    if (nodes[id].kind == NodeKind::Leaf && child_count[id] != 0)
      report.push_back({id, "leaf has children"});
  }

  // Walking up from every node must reach a root within n steps.
  for (NodeId id = 0; id < n; ++id) {
    NodeId cur = id;
    std::size_t steps = 0;
    bool ok = true;
    while (nodes[cur].parent) {
      const NodeId p = *nodes[cur].parent;
      if (p >= n || p == cur || ++steps > n) {
        ok = false;
        break;
      }
      cur = p;
    }
    if (!ok) report.push_back({id, "parent chain is cyclic or broken"});
  }
  return report;
}

Topology::Topology(std::vector<NodeSpec> nodes) : nodes_(std::move(nodes)) {
  const ValidationReport report = validate(nodes_);
  if (!report.empty()) {
    std::ostringstream msg;
    msg << "invalid topology:";
    for (const Violation& v : report) msg << " [node " << v.node << ": " << v.message << "]";
    throw DataError(msg.str());
  }
  const std::size_t n = nodes_.size();
  children_.assign(n, {});
  for (NodeId id = 0; id < n; ++id) {
    if (nodes_[id].parent)
      children_[*nodes_[id].parent].push_back(id);
    else
      root_ = id;
  }
  depth_.assign(n, 0);
  std::vector<NodeId> stack{root_};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    preorder_.push_back(id);
    const auto& kids = children_[id];
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) {
      depth_[*it] = depth_[id] + 1;
      stack.push_back(*it);
    }
  }
}

int Topology::parent_states(NodeId id) const {
  const auto& parent = nodes_.at(id).parent;
  return parent ? nodes_[*parent].num_states : 1;
}

std::vector<NodeId> Topology::leaves() const {
  std::vector<NodeId> out;
  for (NodeId id : preorder_)
    if (is_leaf(id)) out.push_back(id);
  return out;
}

std::vector<NodeId> Topology::aggregators_deepest_first() const {
  std::vector<NodeId> out;
  for (NodeId id : preorder_)
    if (!is_leaf(id)) out.push_back(id);
  std::stable_sort(out.begin(), out.end(),
                   [this](NodeId a, NodeId b) { return depth_[a] > depth_[b]; });
  return out;
}

bool operator==(const NodeSpec& a, const NodeSpec& b) {
  return a.kind == b.kind && a.parent == b.parent && a.num_states == b.num_states &&
         a.x_dim == b.x_dim && a.y_dim == b.y_dim;
}

bool operator==(const Topology& a, const Topology& b) { return a.nodes_ == b.nodes_; }

}  // namespace dst

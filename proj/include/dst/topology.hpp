#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dst {

using NodeId = std::size_t;

enum class NodeKind { Aggregator, Leaf };

struct NodeSpec {
  NodeKind kind = NodeKind::Leaf;
  std::optional<NodeId> parent;
  int num_states = 1;
  int x_dim = 0;  // leaf only
  int y_dim = 0;  // leaf only
};

struct Violation {
  NodeId node;
  std::string message;
};

using ValidationReport = std::vector<Violation>;

// Checks every structural invariant of a tree: one root, aggregators with
// children, childless leaves, acyclic parent links, positive cardinalities.
// Node ids are positions in `nodes`.
ValidationReport validate(const std::vector<NodeSpec>& nodes);

/// Immutable, validated tree of aggregator and leaf chains.
class Topology {
 public:
  // Throws DataError listing all violations if `nodes` is not a valid tree.
  explicit Topology(std::vector<NodeSpec> nodes);

  std::size_t size() const { return nodes_.size(); }
  const NodeSpec& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<NodeId>& children(NodeId id) const { return children_.at(id); }
  NodeId root() const { return root_; }
  bool is_leaf(NodeId id) const { return nodes_.at(id).kind == NodeKind::Leaf; }
  int states(NodeId id) const { return nodes_.at(id).num_states; }

  // Cardinality of the parent chain; the root sees a constant one-state parent.
  int parent_states(NodeId id) const;
  int depth(NodeId id) const { return depth_.at(id); }

  // Depth-first, children in insertion order.
  const std::vector<NodeId>& preorder() const { return preorder_; }
  std::vector<NodeId> leaves() const;
  // Aggregators ordered deepest first; ties keep preorder.
  std::vector<NodeId> aggregators_deepest_first() const;

  friend bool operator==(const Topology& a, const Topology& b);

 private:
  std::vector<NodeSpec> nodes_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<int> depth_;
  std::vector<NodeId> preorder_;
  NodeId root_ = 0;
};

bool operator==(const NodeSpec& a, const NodeSpec& b);

}  // namespace dst

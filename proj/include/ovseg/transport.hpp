#pragma once

// Primal network simplex for the dense transportation problem
//
//   min sum_ij c_ij f_ij   s.t.  sum_j f_ij = a_i,  sum_i f_ij = b_j,  f >= 0.
//
// The basis is a spanning tree rooted at an artificial node; artificial arcs
// carry a big-M cost so they are driven out of the basis. The leaving-arc rule
// keeps the tree strongly feasible, which rules out cycling under degeneracy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ovseg/error.hpp"

namespace ovseg {

struct FlowEntry {
  std::size_t source = 0;
  std::size_t target = 0;
  double mass = 0.0;
};

struct TransportSolution {
  double cost = 0.0;
  std::vector<FlowEntry> flows;  ///< positive entries, row-major order
};

class TransportSimplex {
 public:
  /// `cost` is row-major n x m. Supplies and demands must be non-negative and
  /// balance within `balance_tol`.
  TransportSimplex(std::span<const double> supply, std::span<const double> demand,
                   std::span<const double> cost, double balance_tol = 1e-9)
      : n_(supply.size()), m_(demand.size()), cost_(cost.begin(), cost.end()) {
    if (n_ == 0 || m_ == 0) throw InvalidArgument("transport: empty marginal");
    if (cost_.size() != n_ * m_) throw InvalidArgument("transport: cost matrix has wrong size");
    double sa = 0.0, sb = 0.0;
    for (double v : supply) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("transport: negative supply");
      sa += v;
    }
    for (double v : demand) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("transport: negative demand");
      sb += v;
    }
    if (std::abs(sa - sb) > balance_tol * std::max(1.0, sa)) {
      throw InvalidArgument("transport: supplies and demands do not balance");
    }
    for (double c : cost_) {
      if (!std::isfinite(c)) throw InvalidArgument("transport: non-finite cost");
      max_cost_ = std::max(max_cost_, std::abs(c));
    }
    init(supply, demand);
  }

  TransportSolution solve() {
    const std::size_t real_arcs = n_ * m_;
    const std::size_t block =
        std::max<std::size_t>(static_cast<std::size_t>(std::sqrt(static_cast<double>(arcs_))), 16);
    const double eps = 1e-11 * std::max(1.0, max_cost_) * static_cast<double>(nodes_);
    std::size_t next = 0, row = 0, col = 0;
    const std::size_t max_pivots = 50 * arcs_ + 1000;
    for (std::size_t pivot = 0;; ++pivot) {
      if (pivot > max_pivots) throw Error("transport: pivot limit exceeded");
      // Block search pricing. Real arcs are walked by (row, column) so the hot
      // loop avoids integer division.
      std::size_t entering = kNone;
      double best = -eps;
      std::size_t in_block = 0;
      for (std::size_t k = 0; k < arcs_; ++k) {
        const std::size_t a = next;
        if (!in_tree_[a]) {
          double rc;
          if (a < real_arcs) {
            rc = cost_[a] + pi_[row] - pi_[n_ + col];
          } else {
            rc = art_cost_ + pi_[src(a)] - pi_[tgt(a)];
          }
          if (rc < best) {
            best = rc;
            entering = a;
          }
        }
        if (++next == arcs_) {
          next = 0;
          row = col = 0;
        } else if (next < real_arcs && ++col == m_) {
          col = 0;
          ++row;
        }
        if (++in_block == block) {
          if (entering != kNone) break;
          in_block = 0;
        }
      }
      if (entering == kNone) break;
      pivot_on(entering);
    }

    TransportSolution out;
    for (std::size_t v = 0; v < n_ + m_; ++v) {
      if (flow_[real_arcs + v] > 1e-9 * std::max(1.0, total_)) {
        throw Error("transport: infeasible (artificial flow remains)");
      }
    }
    // Round-off residue from cancelling pivots is not transported mass.
    const double floor = 1e-13 * std::max(1.0, total_);
    for (std::size_t a = 0; a < real_arcs; ++a) {
      if (flow_[a] > floor) {
        out.flows.push_back({a / m_, a % m_, flow_[a]});
        out.cost += flow_[a] * cost_[a];
      }
    }
    return out;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  std::size_t root() const { return n_ + m_; }
  std::size_t src(std::size_t a) const {
    if (a < n_ * m_) return a / m_;
    return art_up_[a - n_ * m_] ? a - n_ * m_ : root();
  }
  std::size_t tgt(std::size_t a) const {
    if (a < n_ * m_) return n_ + a % m_;
    return art_up_[a - n_ * m_] ? root() : a - n_ * m_;
  }
  double arc_cost(std::size_t a) const { return a < n_ * m_ ? cost_[a] : art_cost_; }

  void init(std::span<const double> supply, std::span<const double> demand) {
    nodes_ = n_ + m_ + 1;
    arcs_ = n_ * m_ + n_ + m_;
    art_cost_ = (max_cost_ + 1.0) * static_cast<double>(nodes_);
    flow_.assign(arcs_, 0.0);
    in_tree_.assign(arcs_, false);
    art_up_.assign(n_ + m_, false);
    tree_adj_.assign(nodes_, {});
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t a = n_ * m_ + i;
      // Zero-flow tree arcs must point away from the root.
      art_up_[i] = supply[i] > 0.0;
      flow_[a] = supply[i];
      total_ += supply[i];
      link(a);
    }
    for (std::size_t j = 0; j < m_; ++j) {
      const std::size_t v = n_ + j;
      const std::size_t a = n_ * m_ + v;
      art_up_[v] = false;
      flow_[a] = demand[j];
      link(a);
    }
    parent_.assign(nodes_, kNone);
    pred_.assign(nodes_, kNone);
    pred_up_.assign(nodes_, false);
    depth_.assign(nodes_, 0);
    pi_.assign(nodes_, 0.0);
    rebuild();
  }

  void link(std::size_t a) {
    in_tree_[a] = true;
    tree_adj_[src(a)].push_back(a);
    tree_adj_[tgt(a)].push_back(a);
  }

  void unlink(std::size_t a) {
    in_tree_[a] = false;
    for (std::size_t v : {src(a), tgt(a)}) {
      auto& adj = tree_adj_[v];
      adj.erase(std::find(adj.begin(), adj.end(), a));
    }
  }

  /// Compute parent pointers, depths and potentials from the root.
  void rebuild() {
    parent_[root()] = kNone;
    pred_[root()] = kNone;
    depth_[root()] = 0;
    pi_[root()] = 0.0;
    stack_.clear();
    stack_.push_back(root());
    while (!stack_.empty()) {
      const std::size_t u = stack_.back();
      stack_.pop_back();
      for (std::size_t a : tree_adj_[u]) {
        if (a == pred_[u]) continue;
        const std::size_t c = src(a) == u ? tgt(a) : src(a);
        set_parent(c, u, a);
        stack_.push_back(c);
      }
    }
  }

  void pivot_on(std::size_t in) {
    const std::size_t first = src(in);
    const std::size_t second = tgt(in);
    std::size_t u = first, v = second;
    while (u != v) {
      if (depth_[u] >= depth_[v]) {
        u = parent_[u];
      } else {
        v = parent_[v];
      }
    }
    const std::size_t join = u;

    // Flow travels join -> ... -> first -> second -> ... -> join.
    const double inf = std::numeric_limits<double>::infinity();
    double delta = inf;
    std::size_t leave_node = kNone;
    bool leave_on_first = false;
    for (std::size_t w = first; w != join; w = parent_[w]) {
      const double d = pred_up_[w] ? flow_[pred_[w]] : inf;
      if (d < delta) {
        delta = d;
        leave_node = w;
        leave_on_first = true;
      }
    }
    for (std::size_t w = second; w != join; w = parent_[w]) {
      const double d = pred_up_[w] ? inf : flow_[pred_[w]];
      if (d <= delta) {
        delta = d;
        leave_node = w;
        leave_on_first = false;
      }
    }
    if (leave_node == kNone) throw Error("transport: unbounded pivot");

    if (delta > 0.0) {
      flow_[in] += delta;
      for (std::size_t w = first; w != join; w = parent_[w]) {
        flow_[pred_[w]] += pred_up_[w] ? -delta : delta;
      }
      for (std::size_t w = second; w != join; w = parent_[w]) {
        flow_[pred_[w]] += pred_up_[w] ? delta : -delta;
      }
    }
    const std::size_t out = pred_[leave_node];
    flow_[out] = 0.0;
    unlink(out);
    link(in);
    // Only the subtree cut off below the leaving arc moves; it is re-hung
    // from whichever endpoint of the entering arc lies inside it.
    const std::size_t inside = leave_on_first ? first : second;
    const std::size_t outside = leave_on_first ? second : first;
    attach(inside, outside, in);
  }

  void attach(std::size_t child, std::size_t parent, std::size_t arc) {
    set_parent(child, parent, arc);
    stack_.clear();
    stack_.push_back(child);
    while (!stack_.empty()) {
      const std::size_t u = stack_.back();
      stack_.pop_back();
      for (std::size_t a : tree_adj_[u]) {
        if (a == pred_[u]) continue;
        const std::size_t c = src(a) == u ? tgt(a) : src(a);
        set_parent(c, u, a);
        stack_.push_back(c);
      }
    }
  }

  void set_parent(std::size_t c, std::size_t u, std::size_t a) {
    const bool down = src(a) == u;
    parent_[c] = u;
    pred_[c] = a;
    pred_up_[c] = !down;
    depth_[c] = depth_[u] + 1;
    // Tree arcs have zero reduced cost: c_a + pi[src] - pi[tgt] = 0.
    pi_[c] = down ? pi_[u] + arc_cost(a) : pi_[u] - arc_cost(a);
  }

  std::size_t n_, m_;
  std::vector<double> cost_;
  double max_cost_ = 0.0;
  double art_cost_ = 0.0;
  double total_ = 0.0;
  std::size_t nodes_ = 0, arcs_ = 0;

  std::vector<double> flow_;
  std::vector<bool> in_tree_;
  std::vector<bool> art_up_;
  std::vector<std::vector<std::size_t>> tree_adj_;

  std::vector<std::size_t> parent_, pred_, depth_, stack_;
  std::vector<bool> pred_up_;
  std::vector<double> pi_;
};

}  // namespace ovseg

#pragma once
#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roadvol/params.hpp"
#include "roadvol/tensor.hpp"

namespace roadvol::nn {

using diff::ParamRegistry;
using diff::ParamStore;
using diff::Tape;
using diff::Tensor;

// Edge label relative to the node being updated.
enum EdgeDir : int { kIncoming = 0, kOutgoing = 1, kSelfLoop = 2 };

// Flat per-target message list for directed attention. Every directed edge
// (u,v) yields two messages: (tgt=v, src=u, incoming) and (tgt=u, src=v,
// outgoing); every node gets one self-loop message. Messages are sorted by
// (dir, tgt, src) so each direction class is a contiguous range.
struct DirectedMessages {
  int n_nodes = 0;
  std::vector<int> tgt;
  std::vector<int> src;
  std::array<int, 4> dir_begin{};  // dir class d spans [dir_begin[d], dir_begin[d+1])

  static DirectedMessages build(int n_nodes, std::span<const std::pair<int, int>> edges);
};

// Message list over the symmetrized edge set plus self-loops, single class.
struct UndirectedMessages {
  int n_nodes = 0;
  std::vector<int> tgt;
  std::vector<int> src;

  static UndirectedMessages build(int n_nodes, std::span<const std::pair<int, int>> edges);
};

struct Activation {
  enum Kind { None, ReLU, LeakyReLU } kind = None;
  double slope = 0.2;

  static Activation none() { return {None, 0.0}; }
  static Activation relu() { return {ReLU, 0.0}; }
  static Activation leaky(double s = 0.2) { return {LeakyReLU, s}; }

  Tensor apply(Tensor x) const {
    switch (kind) {
      case ReLU:
        return diff::relu(x);
      case LeakyReLU:
        return diff::leaky_relu(x, slope);
      default:
        return x;
    }
  }
};

// Affine map on the trailing channel axis: [rows, in] -> [rows, out].
class Dense {
 public:
  Dense(ParamRegistry& reg, const std::string& prefix, int in, int out, Activation act);

  Tensor forward(Tape& tape, const ParamStore& store, Tensor x) const;
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

 private:
  int w_ = -1, b_ = -1;
  int in_ = 0, out_ = 0;
  Activation act_;
};

// Same-length 1D convolution along the time axis: [N,T,Cin] -> [N,T,Cout],
// zero padding floor(p/2), stride 1. Kernel size must be odd so the output
// keeps length T.
class TemporalConv {
 public:
  TemporalConv(ParamRegistry& reg, const std::string& prefix, int p, int cin, int cout, Activation act);

  Tensor forward(Tape& tape, const ParamStore& store, Tensor x) const;
  int kernel() const { return p_; }

 private:
  int w_ = -1, b_ = -1;
  int p_ = 0, cin_ = 0, cout_ = 0;
  Activation act_;
};

// Directed graph attention: separate projection W^dir, attention vector
// a^dir and learnable direction embedding d^dir per edge class (incoming /
// outgoing / self-loop). Scores use LeakyReLU(a^dir . [W^dir h_v || W^dir
// h_u || d^dir]) per head; one softmax per updated node pools all direction
// classes of its 1-hop neighborhood.
class DirectedGraphAttention {
 public:
  DirectedGraphAttention(ParamRegistry& reg, const std::string& prefix, int cin, int c, int heads,
                         Activation out_act = Activation::leaky(0.2), double score_slope = 0.2);

  // h: [N,T,Cin] or [N,Cin]; returns same rank with channel dim c.
  Tensor forward(Tape& tape, const ParamStore& store, Tensor h, const DirectedMessages& msgs) const;

  int heads() const { return heads_; }
  int out_dim() const { return c_; }

 private:
  std::array<int, 3> w_{-1, -1, -1};
  std::array<int, 3> b_{-1, -1, -1};
  std::array<int, 3> a_{-1, -1, -1};
  std::array<int, 3> d_{-1, -1, -1};
  int cin_ = 0, c_ = 0, heads_ = 0;
  double score_slope_ = 0.2;
  Activation out_act_;
};

// Plain graph attention on a symmetrized neighborhood (single parameter
// set, no direction embedding). Used by the undirected ablation.
class GraphAttention {
 public:
  GraphAttention(ParamRegistry& reg, const std::string& prefix, int cin, int c, int heads,
                 Activation out_act = Activation::leaky(0.2), double score_slope = 0.2);

  Tensor forward(Tape& tape, const ParamStore& store, Tensor h, const UndirectedMessages& msgs) const;

  int heads() const { return heads_; }
  int out_dim() const { return c_; }

 private:
  int w_ = -1, b_ = -1, a_ = -1;
  int cin_ = 0, c_ = 0, heads_ = 0;
  double score_slope_ = 0.2;
  Activation out_act_;
};

}  // namespace roadvol::nn

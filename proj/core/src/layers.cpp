#include "roadvol/layers.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "roadvol/errors.hpp"

namespace roadvol::nn {

DirectedMessages DirectedMessages::build(int n_nodes, std::span<const std::pair<int, int>> edges) {
  std::vector<std::tuple<int, int, int>> items;  // (dir, tgt, src)
  items.reserve(edges.size() * 2 + static_cast<size_t>(n_nodes));
  for (auto [u, v] : edges) {
    if (u == v) continue;  // explicit self-loops are added below exactly once
    items.emplace_back(kIncoming, v, u);
    items.emplace_back(kOutgoing, u, v);
  }
  for (int w = 0; w < n_nodes; ++w) items.emplace_back(kSelfLoop, w, w);
  std::sort(items.begin(), items.end());

  DirectedMessages m;
  m.n_nodes = n_nodes;
  m.tgt.reserve(items.size());
  m.src.reserve(items.size());
  for (auto [dir, t, s] : items) {
    (void)dir;
    m.tgt.push_back(t);
    m.src.push_back(s);
  }
  m.dir_begin[0] = 0;
  int pos = 0;
  for (int d = 0; d < 3; ++d) {
    while (pos < static_cast<int>(items.size()) && std::get<0>(items[static_cast<size_t>(pos)]) == d) ++pos;
    m.dir_begin[static_cast<size_t>(d) + 1] = pos;
  }
  return m;
}

UndirectedMessages UndirectedMessages::build(int n_nodes, std::span<const std::pair<int, int>> edges) {
  std::set<std::pair<int, int>> pairs;
  for (auto [u, v] : edges) {
    if (u == v) continue;
    pairs.emplace(std::min(u, v), std::max(u, v));
  }
  std::vector<std::pair<int, int>> items;  // (tgt, src)
  for (auto [a, b] : pairs) {
    items.emplace_back(a, b);
    items.emplace_back(b, a);
  }
  for (int w = 0; w < n_nodes; ++w) items.emplace_back(w, w);
  std::sort(items.begin(), items.end());

  UndirectedMessages m;
  m.n_nodes = n_nodes;
  for (auto [t, s] : items) {
    m.tgt.push_back(t);
    m.src.push_back(s);
  }
  return m;
}

// ---------------------------------------------------------------------------

Dense::Dense(ParamRegistry& reg, const std::string& prefix, int in, int out, Activation act)
    : in_(in), out_(out), act_(act) {
  w_ = reg.uniform(prefix + ".W", {in, out}, in);
  b_ = reg.zeros(prefix + ".b", {out});
}

Tensor Dense::forward(Tape& tape, const ParamStore& store, Tensor x) const {
  // copy: shape references into the tape are invalidated as nodes are added
  const diff::Shape s = x.shape();
  if (s.back() != in_)
    throw ShapeError("Dense: input channel dim " + diff::shape_str(s) + " does not end in " + std::to_string(in_));
  Tensor x2 = x;
  bool rank3 = s.size() == 3;
  if (rank3) x2 = diff::reshape(x, {s[0] * s[1], s[2]});
  auto w = store.lease(tape, w_);
  auto b = store.lease(tape, b_);
  Tensor y = diff::add_bias(diff::matmul(x2, w), b);
  if (rank3) y = diff::reshape(y, {s[0], s[1], out_});
  return act_.apply(y);
}

TemporalConv::TemporalConv(ParamRegistry& reg, const std::string& prefix, int p, int cin, int cout, Activation act)
    : p_(p), cin_(cin), cout_(cout), act_(act) {
  if (p <= 0 || p % 2 == 0)
    throw ConfigError("TemporalConv: kernel size must be odd and positive, got " + std::to_string(p));
  w_ = reg.uniform(prefix + ".W", {p, cout, cin}, p * cin);
  b_ = reg.zeros(prefix + ".b", {cout});
}

Tensor TemporalConv::forward(Tape& tape, const ParamStore& store, Tensor x) const {
  auto w = store.lease(tape, w_);
  auto b = store.lease(tape, b_);
  return act_.apply(diff::conv1d_same(x, w, b));
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kDirName[3] = {"in", "out", "self"};

// Shared score/aggregate machinery. proj[d]: [N,T,C] projected features per
// direction class; attention thirds a1/a2 dotted per head; a3 folds the
// direction embedding into a per-head score bias.
Tensor attention_aggregate(const std::vector<Tensor>& proj_per_dir, const std::vector<Tensor>& a1_per_dir,
                           const std::vector<Tensor>& a2_per_dir, const std::vector<Tensor>& bias3_per_dir,
                           const std::vector<int>& tgt, const std::vector<int>& src,
                           const std::array<int, 4>& dir_begin, int n_nodes, int heads, double score_slope) {
  std::vector<Tensor> score_parts;
  std::vector<Tensor> msg_parts;
  int n_dirs = static_cast<int>(proj_per_dir.size());
  for (int d = 0; d < n_dirs; ++d) {
    int lo = dir_begin[static_cast<size_t>(d)];
    int hi = dir_begin[static_cast<size_t>(d) + 1];
    if (lo == hi) continue;
    std::vector<int> idx_v(tgt.begin() + lo, tgt.begin() + hi);
    std::vector<int> idx_u(src.begin() + lo, src.begin() + hi);
    Tensor pv = diff::gather_rows(proj_per_dir[static_cast<size_t>(d)], std::move(idx_v));
    Tensor pu = diff::gather_rows(proj_per_dir[static_cast<size_t>(d)], std::move(idx_u));
    Tensor s = diff::add(diff::head_dot(pv, a1_per_dir[static_cast<size_t>(d)], heads),
                         diff::head_dot(pu, a2_per_dir[static_cast<size_t>(d)], heads));
    if (bias3_per_dir[static_cast<size_t>(d)].valid()) s = diff::add_bias(s, bias3_per_dir[static_cast<size_t>(d)]);
    score_parts.push_back(diff::leaky_relu(s, score_slope));
    msg_parts.push_back(pu);
  }
  Tensor scores = score_parts.size() == 1 ? score_parts[0]
                                          : diff::concat(std::span<const Tensor>(score_parts), 0);
  Tensor msgs = msg_parts.size() == 1 ? msg_parts[0] : diff::concat(std::span<const Tensor>(msg_parts), 0);
  Tensor alpha = diff::softmax_over_groups(scores, tgt, n_nodes);
  return diff::segment_weighted_sum(alpha, msgs, tgt, n_nodes);
}

}  // namespace

DirectedGraphAttention::DirectedGraphAttention(ParamRegistry& reg, const std::string& prefix, int cin, int c,
                                               int heads, Activation out_act, double score_slope)
    : cin_(cin), c_(c), heads_(heads), score_slope_(score_slope), out_act_(out_act) {
  if (heads <= 0 || c % heads != 0)
    throw ConfigError("DirectedGraphAttention: hidden dim " + std::to_string(c) + " not divisible by heads " +
                      std::to_string(heads));
  int ch = c / heads;
  for (int d = 0; d < 3; ++d) {
    std::string base = prefix + "." + kDirName[d];
    w_[static_cast<size_t>(d)] = reg.uniform(base + ".W", {cin, c}, cin);
    b_[static_cast<size_t>(d)] = reg.zeros(base + ".b", {c});
    a_[static_cast<size_t>(d)] = reg.uniform(base + ".a", {3 * c}, 3 * ch);
    d_[static_cast<size_t>(d)] = reg.normal(base + ".d", {c}, 0.0, 0.1);
  }
}

Tensor DirectedGraphAttention::forward(Tape& tape, const ParamStore& store, Tensor h,
                                       const DirectedMessages& msgs) const {
  const diff::Shape s = h.shape();
  bool rank2 = s.size() == 2;
  Tensor x = rank2 ? diff::reshape(h, {s[0], 1, s[1]}) : h;
  const diff::Shape sx = x.shape();
  if (sx.size() != 3 || sx[2] != cin_)
    throw ShapeError("DirectedGraphAttention: expected [N,T," + std::to_string(cin_) + "], got " +
                     diff::shape_str(s));
  int N = sx[0], T = sx[1];
  if (N != msgs.n_nodes) throw ShapeError("DirectedGraphAttention: message list built for different node count");

  Tensor x2 = diff::reshape(x, {N * T, cin_});
  std::vector<Tensor> proj(3), a1(3), a2(3), bias3(3);
  for (int d = 0; d < 3; ++d) {
    auto w = store.lease(tape, w_[static_cast<size_t>(d)]);
    auto b = store.lease(tape, b_[static_cast<size_t>(d)]);
    proj[static_cast<size_t>(d)] = diff::reshape(diff::add_bias(diff::matmul(x2, w), b), {N, T, c_});
    auto a = store.lease(tape, a_[static_cast<size_t>(d)]);
    a1[static_cast<size_t>(d)] = diff::slice(a, 0, 0, c_);
    a2[static_cast<size_t>(d)] = diff::slice(a, 0, c_, c_);
    Tensor a3 = diff::slice(a, 0, 2 * c_, c_);
    Tensor emb = store.lease(tape, d_[static_cast<size_t>(d)]);
    // per-head score contribution of the direction embedding
    bias3[static_cast<size_t>(d)] =
        diff::head_dot(diff::reshape(emb, {1, c_}), a3, heads_);  // [1, heads]
    bias3[static_cast<size_t>(d)] = diff::reshape(bias3[static_cast<size_t>(d)], {heads_});
  }
  Tensor out =
      attention_aggregate(proj, a1, a2, bias3, msgs.tgt, msgs.src, msgs.dir_begin, N, heads_, score_slope_);
  out = out_act_.apply(out);
  if (rank2) out = diff::reshape(out, {N, c_});
  return out;
}

GraphAttention::GraphAttention(ParamRegistry& reg, const std::string& prefix, int cin, int c, int heads,
                               Activation out_act, double score_slope)
    : cin_(cin), c_(c), heads_(heads), score_slope_(score_slope), out_act_(out_act) {
  if (heads <= 0 || c % heads != 0)
    throw ConfigError("GraphAttention: hidden dim " + std::to_string(c) + " not divisible by heads " +
                      std::to_string(heads));
  int ch = c / heads;
  w_ = reg.uniform(prefix + ".W", {cin, c}, cin);
  b_ = reg.zeros(prefix + ".b", {c});
  a_ = reg.uniform(prefix + ".a", {2 * c}, 2 * ch);
}

Tensor GraphAttention::forward(Tape& tape, const ParamStore& store, Tensor h, const UndirectedMessages& msgs) const {
  const diff::Shape s = h.shape();
  bool rank2 = s.size() == 2;
  Tensor x = rank2 ? diff::reshape(h, {s[0], 1, s[1]}) : h;
  const diff::Shape sx = x.shape();
  if (sx.size() != 3 || sx[2] != cin_)
    throw ShapeError("GraphAttention: expected [N,T," + std::to_string(cin_) + "], got " + diff::shape_str(s));
  int N = sx[0], T = sx[1];
  if (N != msgs.n_nodes) throw ShapeError("GraphAttention: message list built for different node count");

  Tensor x2 = diff::reshape(x, {N * T, cin_});
  auto w = store.lease(tape, w_);
  auto b = store.lease(tape, b_);
  std::vector<Tensor> proj{diff::reshape(diff::add_bias(diff::matmul(x2, w), b), {N, T, c_})};
  auto a = store.lease(tape, a_);
  std::vector<Tensor> a1{diff::slice(a, 0, 0, c_)};
  std::vector<Tensor> a2{diff::slice(a, 0, c_, c_)};
  std::vector<Tensor> bias3{Tensor{}};
  std::array<int, 4> ranges{0, static_cast<int>(msgs.tgt.size()), static_cast<int>(msgs.tgt.size()),
                            static_cast<int>(msgs.tgt.size())};
  Tensor out = attention_aggregate(proj, a1, a2, bias3, msgs.tgt, msgs.src, ranges, N, heads_, score_slope_);
  out = out_act_.apply(out);
  if (rank2) out = diff::reshape(out, {N, c_});
  return out;
}

}  // namespace roadvol::nn

#pragma once

#include "ovhhir/tensor.hpp"

#include <deque>
#include <functional>
#include <vector>

namespace ovhhir {

// Reverse-mode autodiff over a per-forward tape. Ops evaluate eagerly on
// creation; backward() replays the tape in reverse. Nodes live in a deque so
// Node* handles stay valid while the graph exists.
//
// Every model forward in the project (frozen or learnable) runs through
// these ops; "frozen" only means the leaf does not accumulate gradient.
class Graph {
  public:
    struct Node {
        Tensor value;
        Tensor grad;                    // allocated iff needs_grad
        bool needs_grad = false;
        std::function<void()> backward; // empty for leaves / no-grad nodes
    };

    Node * input(Tensor v, bool needs_grad = false);
    Node * param(Parameter & p);

    // c = a @ b, 2-D
    Node * matmul(Node * a, Node * b);
    // elementwise, same shape
    Node * add(Node * a, Node * b);
    Node * mul(Node * a, Node * b);
    // c[i,j] = a[i,j] + bias[j]
    Node * add_bias(Node * a, Node * bias);
    // c[i,j] = a[i,j] * w[j]
    Node * mul_row(Node * a, Node * w);
    Node * scale(Node * a, double c);
    Node * transpose(Node * a);
    Node * reshape(Node * a, std::vector<int64_t> shape);
    Node * slice_rows(Node * a, int64_t r0, int64_t r1);
    Node * slice_cols(Node * a, int64_t c0, int64_t c1);
    Node * concat_rows(const std::vector<Node *> & parts);
    Node * concat_cols(const std::vector<Node *> & parts);
    Node * gather_rows(Node * a, std::vector<int64_t> idx);
    Node * softmax_rows(Node * a);
    // adds -1e9 above the diagonal; square input
    Node * causal_mask(Node * a);
    Node * layernorm(Node * a, Node * gain, Node * bias, double eps = 1e-5);
    Node * gelu(Node * a);
    // x: (T*P) x d, table: T_max x d; out[t*P+p,:] = x[t*P+p,:] + table[t,:]
    Node * add_time_rows(Node * x, Node * table, int64_t t_count, int64_t p_count);
    // logits: M x V, ids: M; scalar mean of -log softmax(logits)[id]
    Node * mean_cross_entropy(Node * logits, std::vector<int64_t> ids);
    Node * sum_all(Node * a);

    // Multi-head scaled dot-product attention over already-projected q/k/v.
    // q: M x d, k,v: N x d, d divisible by heads. Causal requires M == N.
    Node * attend(Node * q, Node * k, Node * v, int heads, bool causal);

    // seed must be scalar (numel == 1)
    void backward(Node * loss);

    size_t size() const { return nodes_.size(); }

  private:
    Node * make(Tensor value, std::vector<Node *> parents, std::function<void()> bw);

    std::deque<Node> nodes_;
};

} // namespace ovhhir

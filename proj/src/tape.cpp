#include "posegauss/tape.hpp"

#include <stdexcept>

namespace pg {

template <typename Scalar>
ParamBuffer<Scalar>& ParamStore<Scalar>::add(const std::string& name,
                                             std::vector<int> shape) {
  if (find(name) != nullptr)
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  auto p = std::make_unique<ParamBuffer<Scalar>>();
  p->name = name;
  p->shape = std::move(shape);
  p->value = ParamBuffer<Scalar>::Vector::Zero(n);
  p->grad = ParamBuffer<Scalar>::Vector::Zero(n);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename Scalar>
ParamBuffer<Scalar>* ParamStore<Scalar>::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename Scalar>
Eigen::Index ParamStore<Scalar>::total_size() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Tensor3<Scalar> value) {
  return push(std::move(value), false, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Tensor3<Scalar> value) {
  return push(std::move(value), true, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::push(Tensor3<Scalar> value, bool requires_grad,
                               Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = requires_grad ? std::move(backward) : Backward{};
  nodes_.push_back(std::move(n));
  return Var<Scalar>{this, int(nodes_.size()) - 1};
}

template <typename Scalar>
Tensor3<Scalar>& Tape<Scalar>::grad(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor3<Scalar>::zeros_like(n.value);
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::backward(Var<Scalar> terminal, Scalar seed) {
  if (terminal.tape != this || terminal.id < 0 || terminal.id >= int(nodes_.size()))
    throw std::invalid_argument("Tape::backward: terminal does not belong to this tape");
  const Node& t = nodes_[terminal.id];
  if (t.value.size() != 1)
    throw std::invalid_argument("Tape::backward: terminal must be a scalar, got " +
                                t.value.shape_string());
  if (!t.requires_grad) return;
  grad(terminal.id)[0] += seed;
  for (int i = terminal.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace pg

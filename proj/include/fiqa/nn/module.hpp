#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fiqa/tensor.hpp"

namespace fiqa::nn {

enum class Mode { Train, Eval };

struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Shape shape) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0f); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

// Operation count for one leaf layer at a given input shape.
struct LayerCost {
  std::string name;
  std::string type;
  // Multiply-accumulates for convolution and linear layers, accumulations or
  // comparisons for pooling, zero for elementwise layers.
  std::int64_t macs = 0;
  std::int64_t params = 0;
  Shape output{};
  bool supported = true;
};

std::string join_name(const std::string& prefix, const std::string& child);

class Module {
 public:
  virtual ~Module() = default;

  // Train mode retains whatever backward() needs. Eval mode never mutates the
  // module, so a module in eval use may be shared between threads.
  virtual Tensor forward(Tensor x, Mode mode) = 0;
  // Must follow a Train-mode forward. Accumulates into parameter gradients and
  // returns the gradient with respect to the forward input.
  virtual Tensor backward(Tensor grad) = 0;

  virtual void collect_parameters(const std::string& prefix,
                                  std::vector<NamedParameter>& out);
  virtual void collect_buffers(const std::string& prefix,
                               std::vector<NamedBuffer>& out);

  // Shape propagation with per-layer cost accounting. The default runs an
  // eval forward on zeros to learn the output shape and records the module as
  // unsupported (zero cost).
  virtual Shape trace(const Shape& input, const std::string& name,
                      std::vector<LayerCost>& out);

  virtual std::string type_name() const = 0;

  // Direct submodules that carry state (parameters or buffers).
  virtual std::vector<Module*> children() { return {}; }
};

// Pre-order walk over a module tree.
template <typename F>
void for_each_module(Module& root, F&& f) {
  f(root);
  for (Module* child : root.children()) for_each_module(*child, f);
}

class Sequential : public Module {
 public:
  Sequential& add(std::string name, std::unique_ptr<Module> module);
  template <typename M, typename... Args>
  M& emplace(std::string name, Args&&... args) {
    auto module = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *module;
    add(std::move(name), std::move(module));
    return ref;
  }
  // Appends with the next positional index as its name.
  template <typename M, typename... Args>
  M& push(Args&&... args) {
    return emplace<M>(std::to_string(children_.size()), std::forward<Args>(args)...);
  }

  std::size_t size() const { return children_.size(); }
  bool empty() const { return children_.empty(); }
  Module& at(std::size_t i) { return *children_.at(i).second; }

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<NamedBuffer>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "Sequential"; }
  std::vector<Module*> children() override;

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

}  // namespace fiqa::nn

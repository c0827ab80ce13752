// Copyright 2026 The protodiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "protodiff/tensor.hpp"

namespace protodiff::ag {

// One vertex of the reverse-mode tape. Inputs are held by shared_ptr so a
// loss Var keeps its whole graph alive until it goes out of scope.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value);  // trainable parameter

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor& value() const { return node_->value; }
  [[nodiscard]] Tensor& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] const Tensor& grad() const { return node_->grad; }
  [[nodiscard]] Node* node() const { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<Node>& shared() const { return node_; }

  void zero_grad();
  // Scalar value of a single-element Var.
  [[nodiscard]] float item() const;

 private:
  std::shared_ptr<Node> node_;
};

// True unless a NoGradGuard is active on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates the output node of an op. When gradients are disabled or no input
// requires them, the result is a constant and `backward` is never attached.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward = {});

// True when an op with these inputs should record a backward closure.
bool needs_grad(std::initializer_list<const Var*> inputs);

// Runs reverse accumulation from a single-element root, seeding d(root)=1.
void backward(const Var& root);

}  // namespace protodiff::ag

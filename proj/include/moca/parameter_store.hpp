#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/tensor.hpp"

namespace moca {

inline constexpr const char *kCheckpointMagic = "MOCA-CKPT-v1";

/// Named learnable parameters θ with their accumulated gradients. Iteration
/// order is insertion order so reductions and checkpoints are deterministic.
class ParameterStore {
public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<double> grad;
    bool trainable = true;
  };

  void add(const std::string &name, Tensor init, bool trainable = true);
  bool contains(const std::string &name) const;

  const Tensor &value(const std::string &name) const;
  /// Overwrites the data of an existing parameter; the shape must not change.
  void set(const std::string &name, const Tensor &value);
  std::vector<double> &grad(const std::string &name);
  const std::vector<double> &grad(const std::string &name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry> &entries() const { return entries_; }
  std::vector<Entry> &entries() { return entries_; }
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;

  void zero_grad();

  std::string to_json() const;
  static ParameterStore from_json(const std::string &text);
  void save(const std::filesystem::path &path) const;
  static ParameterStore load(const std::filesystem::path &path);

  /// git-style blob SHA-1 of the serialized checkpoint.
  std::string content_hash() const;

  std::size_t index_of(const std::string &name) const;

private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Per-worker binding of a store's parameters as autodiff leaves. Gradients
/// are read back with `collect_grads` after `ad::backward`.
class Binding {
public:
  /// With `track_grad` false the parameters are bound as constants.
  explicit Binding(const ParameterStore &store, bool track_grad = true);

  const ad::Var &operator[](const std::string &name) const;
  bool contains(const std::string &name) const;

  /// Gradients in store order (one vector per parameter).
  std::vector<std::vector<double>> collect_grads() const;

private:
  const ParameterStore *store_;
  std::vector<ad::Var> vars_;
};

/// Adds per-worker gradients into the store's gradient buffers.
void accumulate_grads(ParameterStore &store,
                      const std::vector<std::vector<double>> &grads,
                      double weight = 1.0);

/// SHA-1 of "blob <size>\0<body>", as git computes it.
std::string git_blob_sha1(std::string_view body);

} // namespace moca

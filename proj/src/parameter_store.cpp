#include "moca/parameter_store.hpp"

#include <openssl/sha.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "moca/errors.hpp"

namespace moca {

using nlohmann::json;

void ParameterStore::add(const std::string &name, Tensor init,
                         bool trainable) {
  require(!contains(name), "duplicate parameter name: " + name);
  lookup_.emplace(name, entries_.size());
  Entry e;
  e.name = name;
  e.grad.assign(init.size(), 0.0);
  e.value = std::move(init);
  e.trainable = trainable;
  entries_.push_back(std::move(e));
}

bool ParameterStore::contains(const std::string &name) const {
  return lookup_.count(name) > 0;
}

std::size_t ParameterStore::index_of(const std::string &name) const {
  auto it = lookup_.find(name);
  require(it != lookup_.end(), "unknown parameter: " + name);
  return it->second;
}

const Tensor &ParameterStore::value(const std::string &name) const {
  return entries_[index_of(name)].value;
}

void ParameterStore::set(const std::string &name, const Tensor &value) {
  Entry &e = entries_[index_of(name)];
  require(e.value.shape == value.shape,
          "parameter " + name + " shape is immutable: " +
              shape_str(e.value.shape) + " vs " + shape_str(value.shape));
  e.value.data = value.data;
}

std::vector<double> &ParameterStore::grad(const std::string &name) {
  return entries_[index_of(name)].grad;
}

const std::vector<double> &ParameterStore::grad(const std::string &name) const {
  return entries_[index_of(name)].grad;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto &e : entries_) out.push_back(e.name);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto &e : entries_) n += e.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto &e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

std::string ParameterStore::to_json() const {
  json params = json::object();
  json order = json::array();
  for (const auto &e : entries_) {
    params[e.name] = {{"shape", e.value.shape},
                      {"data", e.value.data},
                      {"trainable", e.trainable}};
    order.push_back(e.name);
  }
  json doc = {{"magic", kCheckpointMagic}, {"order", order},
              {"params", params}};
  return doc.dump();
}

ParameterStore ParameterStore::from_json(const std::string &text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ContractViolation(std::string("checkpoint is not valid JSON: ") +
                            e.what());
  }
  require(doc.value("magic", "") == kCheckpointMagic,
          "checkpoint magic header missing or wrong (expected " +
              std::string(kCheckpointMagic) + ")");
  ParameterStore store;
  for (const auto &name : doc.at("order")) {
    const json &p = doc.at("params").at(name.get<std::string>());
    Tensor t(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
    store.add(name.get<std::string>(), std::move(t),
              p.value("trainable", true));
  }
  return store;
}

void ParameterStore::save(const std::filesystem::path &path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write checkpoint " + path.string());
  out << to_json();
}

ParameterStore ParameterStore::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string git_blob_sha1(std::string_view body) {
  const std::string blob =
      "blob " + std::to_string(body.size()) + std::string(1, '\0') + std::string(body);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char *>(blob.data()), blob.size(),
       digest);
  std::ostringstream os;
  for (unsigned char c : digest)
    os << std::hex << std::setw(2) << std::setfill('0') << int(c);
  return os.str();
}

std::string ParameterStore::content_hash() const { return git_blob_sha1(to_json()); }

Binding::Binding(const ParameterStore &store, bool track_grad)
    : store_(&store) {
  vars_.reserve(store.size());
  for (const auto &e : store.entries()) {
    vars_.push_back(track_grad && e.trainable ? ad::parameter(e.value)
                                              : ad::constant(e.value));
  }
}

const ad::Var &Binding::operator[](const std::string &name) const {
  return vars_[store_->index_of(name)];
}

bool Binding::contains(const std::string &name) const {
  return store_->contains(name);
}

std::vector<std::vector<double>> Binding::collect_grads() const {
  std::vector<std::vector<double>> out;
  out.reserve(vars_.size());
  for (const auto &v : vars_) out.push_back(v.grad());
  return out;
}

void accumulate_grads(ParameterStore &store,
                      const std::vector<std::vector<double>> &grads,
                      double weight) {
  auto &entries = store.entries();
  require(grads.size() == entries.size(), "gradient set size mismatch");
  for (std::size_t p = 0; p < entries.size(); ++p) {
    require(grads[p].size() == entries[p].grad.size(),
            "gradient shape mismatch for " + entries[p].name);
    for (std::size_t i = 0; i < grads[p].size(); ++i)
      entries[p].grad[i] += weight * grads[p][i];
  }
}

} // namespace moca

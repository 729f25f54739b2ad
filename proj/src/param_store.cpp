#include "lanetopo/param_store.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lanetopo {

using nlohmann::json;

Tensor& ParamStore::ensure(const std::string& name, int rows, int cols, Init init, Rng& rng) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    Tensor& t = entries_[it->second].value;
    if (t.rows != rows || t.cols != cols)
      throw ShapeError("parameter " + name + " exists with shape " + t.shape_str());
    return t;
  }
  Entry e;
  e.name = name;
  e.value = Tensor(rows, cols);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      for (auto& x : e.value.data) x = 1.0;
      break;
    case Init::Xavier: {
      double s = std::sqrt(2.0 / (rows + cols));
      for (auto& x : e.value.data) x = s * rng.normal();
      break;
    }
  }
  e.grad = Tensor(rows, cols);
  e.m = Tensor(rows, cols);
  e.v = Tensor(rows, cols);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    Entry e;
    e.name = name;
    e.grad = Tensor(value.rows, value.cols);
    e.m = Tensor(value.rows, value.cols);
    e.v = Tensor(value.rows, value.cols);
    e.value = std::move(value);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
  } else {
    Entry& e = entries_[it->second];
    if (!e.value.same_shape(value))
      throw ShapeError("set: shape mismatch for parameter " + name);
    e.value = std::move(value);
  }
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return entries_[it->second];
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return entries_[it->second].value;
}
Tensor& ParamStore::grad(const std::string& name) { return entry(name).grad; }

void ParamStore::zero_grads() {
  for (auto& e : entries_)
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

void ParamStore::scale_grads(double s) {
  for (auto& e : entries_)
    for (auto& x : e.grad.data) x *= s;
}

void ParamStore::adamw_step(double lr, double weight_decay, double beta1, double beta2,
                            double eps) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& e : entries_) {
    bool decay = weight_decay > 0.0;
    if (e.name.size() >= 2) {
      auto tail = e.name.substr(e.name.size() - 2);
      if (tail == ".b" || tail == ".g") decay = false;
    }
    if (e.name.rfind("query.", 0) == 0) decay = false;
    for (int i = 0; i < e.value.numel(); ++i) {
      double g = e.grad.data[i];
      e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
      e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
      double mhat = e.m.data[i] / bc1;
      double vhat = e.v.data[i] / bc2;
      double upd = mhat / (std::sqrt(vhat) + eps);
      if (decay) upd += weight_decay * e.value.data[i];
      e.value.data[i] -= lr * upd;
    }
  }
}

namespace {
void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}
void read_doubles(std::ifstream& in, std::vector<double>& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw InputError("checkpoint payload truncated");
}
}  // namespace

void ParamStore::save(const std::string& path, const std::string& extra_json) const {
  json header;
  header["version"] = 1;
  json plist = json::array();
  for (const auto& e : entries_)
    plist.push_back({{"name", e.name}, {"shape", {e.value.rows, e.value.cols}}});
  header["params"] = plist;
  header["opt_state"] = true;
  header["step"] = step_;
  if (!extra_json.empty()) header["extra"] = json::parse(extra_json);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path);
  std::string h = header.dump();
  out << h << "\n";
  for (const auto& e : entries_) write_doubles(out, e.value.data);
  for (const auto& e : entries_) write_doubles(out, e.m.data);
  for (const auto& e : entries_) write_doubles(out, e.v.data);
  if (!out) throw InputError("checkpoint write failed: " + path);
}

std::string ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError("checkpoint missing header");
  json header = json::parse(line);
  if (header.value("version", 0) != 1) throw InputError("unsupported checkpoint version");
  entries_.clear();
  index_.clear();
  for (const auto& p : header["params"]) {
    Entry e;
    e.name = p["name"].get<std::string>();
    int r = p["shape"][0].get<int>();
    int c = p["shape"][1].get<int>();
    e.value = Tensor(r, c);
    e.grad = Tensor(r, c);
    e.m = Tensor(r, c);
    e.v = Tensor(r, c);
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }
  for (auto& e : entries_) read_doubles(in, e.value.data);
  if (header.value("opt_state", false)) {
    for (auto& e : entries_) read_doubles(in, e.m.data);
    for (auto& e : entries_) read_doubles(in, e.v.data);
  }
  step_ = header.value("step", int64_t{0});
  if (header.contains("extra")) return header["extra"].dump();
  return "";
}

}  // namespace lanetopo

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lanetopo/rng.hpp"
#include "lanetopo/tensor.hpp"

namespace lanetopo {

enum class Init { Zeros, Ones, Xavier };

// Named parameter tensors with matching gradient slots and AdamW moments.
// Insertion order is stable and defines the checkpoint payload order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;  // first moment
    Tensor v;  // second moment
  };

  // Creates the parameter if absent; verifies the shape if present.
  Tensor& ensure(const std::string& name, int rows, int cols, Init init, Rng& rng);
  void set(const std::string& name, Tensor value);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  void zero_grads();
  void scale_grads(double s);

  // Decoupled weight decay adaptive update (AdamW). Skips decay for
  // biases/norm parameters (names ending in ".b", ".g") and embeddings
  // prefixed "query.".
  void adamw_step(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  // Checkpoint: JSON header line {"params":[{"name":..,"shape":[r,c]},..],
  // "version":1,...} followed by a little-endian float64 payload in header
  // order. Optimizer moments ride along under "opt_state" so training resumes
  // bit-exactly.
  void save(const std::string& path, const std::string& extra_json = "") const;
  // Returns the "extra" JSON object text stored at save time ("" if none).
  std::string load(const std::string& path);

 private:
  Entry& entry(const std::string& name);
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  int64_t step_ = 0;
};

}  // namespace lanetopo

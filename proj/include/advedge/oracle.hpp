#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>

#include "advedge/model.hpp"
#include "advedge/tensor.hpp"

namespace advedge {

/// Exact, capped counter of target-model evaluations. Safe to share between
/// concurrently running attacks; the count never exceeds the cap.
struct QueryLedger {
  explicit QueryLedger(std::uint64_t cap_) : cap(cap_) {}

  /// Reserves one query. Returns false once the budget is spent.
  bool try_acquire() {
    std::uint64_t cur = used.load(std::memory_order_relaxed);
    while (cur < cap) {
      if (used.compare_exchange_weak(cur, cur + 1, std::memory_order_relaxed)) return true;
    }
    return false;
  }

  std::uint64_t count() const { return used.load(std::memory_order_relaxed); }

  std::atomic<std::uint64_t> used{0};
  std::uint64_t cap;
};

/// Black-box view of a target model: callers get probability vectors and a
/// ledger entry per request, nothing else. Constructible from any scorer so
/// tests can substitute synthetic targets.
class QueryOracle {
 public:
  using Scorer = std::function<Tensor<float>(const Tensor<float>&)>;

  QueryOracle(const TrainedModel& target, std::uint64_t cap)
      : scorer_([&target](const Tensor<float>& img) { return predict(target, img); }),
        ledger_(std::make_shared<QueryLedger>(cap)) {}

  QueryOracle(Scorer scorer, std::shared_ptr<QueryLedger> ledger)
      : scorer_(std::move(scorer)), ledger_(std::move(ledger)) {}

  /// One probability-vector request; exactly one ledger increment.
  /// nullopt signals an exhausted budget and the request is refused.
  std::optional<Tensor<float>> query(const Tensor<float>& image) {
    if (!ledger_->try_acquire()) return std::nullopt;
    return scorer_(image);
  }

  std::uint64_t used() const { return ledger_->count(); }
  std::uint64_t cap() const { return ledger_->cap; }
  const std::shared_ptr<QueryLedger>& ledger() const { return ledger_; }

 private:
  Scorer scorer_;
  std::shared_ptr<QueryLedger> ledger_;
};

}  // namespace advedge

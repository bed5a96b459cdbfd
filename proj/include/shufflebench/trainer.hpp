#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shufflebench/dataset.hpp"
#include "shufflebench/shuffle.hpp"
#include "shufflebench/storage_io.hpp"

namespace shufflebench {

enum class Loss { Logistic, SquaredHinge };
enum class OverlapMode { None, Prefetch };

/// Training produced non-finite values (runaway learning rate and the like).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string_view loss_name(Loss loss);
Loss parse_loss(std::string_view name); // logistic | squared-hinge
std::string_view overlap_name(OverlapMode mode);
OverlapMode parse_overlap(std::string_view name); // none | prefetch

struct TrainConfig {
    double learning_rate = 0.1;
    double lambda = 1e-4; // L2 coefficient
    Loss loss = Loss::Logistic;
    std::uint32_t max_epochs = 50;
    double target_rfvd = 1e-2;
    OverlapMode overlap_mode = OverlapMode::None;

    void validate() const;
};

struct LinearModel {
    std::vector<double> weights;
    double bias = 0.0;
};

struct BatchGradient {
    std::vector<double> weights;
    double bias = 0.0;
    double batch_loss = 0.0; // mean loss over the batch plus the L2 term
};

/// Gradient of mean(loss over batch) + lambda*||w||^2. The bias carries no
/// regularization. Duplicating every instance leaves the result unchanged.
BatchGradient batch_gradient(const LinearModel& model, std::span<const Record> batch,
                             Loss loss, double lambda);

/// Regularized mean loss over a record set.
double objective_value(const LinearModel& model, std::span<const Record> records, Loss loss,
                       double lambda);

/// |f - f_star| / |f_star|.
double relative_fvd(double f, double f_star);

/// Loading time hidden behind computation: zero without prefetch, otherwise
/// min(t_load, t_comp).
double overlap_time(double t_load, double t_comp, OverlapMode mode);

/// Per-epoch time components of one run.
struct TimeModel {
    double t_preprocess = 0;
    double t_load = 0;
    double t_comp = 0;
    double t_overlapping = 0;
    std::uint32_t epochs = 0;
};

/// t_preprocess + (t_load + t_comp - t_overlapping) * epochs.
double total_time(const TimeModel& tm);

struct EpochRow {
    std::uint32_t epoch = 0;
    double objective = 0;
    double rfvd = 0; // NaN when no reference minimum is known
    double t_load_sim = 0;
    double t_load_wall = 0;
    double t_comp_wall = 0;
    std::uint64_t pages_seq = 0;
    std::uint64_t pages_rand = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t redundant_loads = 0;
};

struct RunSummary {
    Strategy strategy = Strategy::NoShuffle;
    std::string device;
    OverlapMode overlap = OverlapMode::None;
    std::uint32_t epochs = 0;
    std::optional<std::uint32_t> epochs_to_target;
    double t_preprocess_sim = 0;
    double t_preprocess_wall = 0;
    double t_load_sim = 0;  // per-epoch mean
    double t_load_wall = 0; // per-epoch mean
    double t_comp_wall = 0; // per-epoch mean
    double t_overlap_sim = 0;
    double t_overlap_wall = 0;
    double total_sim = 0;  // simulated load figures + measured compute
    double total_wall = 0; // wall-clock figures throughout
    bool diverged = false;
};

struct RunResult {
    std::vector<EpochRow> epochs;
    std::optional<double> f_star;
    std::optional<std::uint32_t> epochs_to_target;
    RunSummary summary;
    IoStats preprocess_io;
    IoStats training_io;
    LinearModel model;
    bool diverged = false;
};

/// Owns everything one strategy needs to feed batches: the I/O context with
/// its page cache, the open dataset, and the strategy's prepared state
/// (offset table or split batch files).
class StrategySession {
  public:
    StrategySession(const std::filesystem::path& dataset_path, StrategyConfig config,
                    std::size_t cache_pages, std::filesystem::path scratch_dir = {});

    /// One-time preparation: BMF splits the dataset into batch files;
    /// the LIRS strategies build the offset table (arithmetic for dense
    /// data, an accounted scan or sidecar read for sparse); the rest do
    /// nothing. Returns wall-clock seconds.
    double preprocess();

    EpochPlan plan_epoch(std::uint32_t epoch) const;

    /// Loads every batch of the plan in order. Wall time spent reading and
    /// deserializing accumulates until take_epoch_load_wall().
    void for_each_batch(const EpochPlan& plan,
                        const std::function<void(std::size_t, std::vector<Record>&&)>& consume);

    double take_epoch_load_wall();

    IoContext& io() { return io_; }
    Dataset& dataset() { return *dataset_; }
    const StrategyConfig& config() const { return config_; }
    const OffsetTable* offset_table() const { return have_table_ ? &table_ : nullptr; }
    std::uint64_t num_instances() const;

  private:
    void load_plan_driven(const EpochPlan& plan,
                          const std::function<void(std::size_t, std::vector<Record>&&)>& consume);
    void load_sequential(const EpochPlan& plan,
                         const std::function<void(std::size_t, std::vector<Record>&&)>& consume);
    void load_bmf(const EpochPlan& plan,
                  const std::function<void(std::size_t, std::vector<Record>&&)>& consume);

    StrategyConfig config_;
    IoContext io_;
    std::optional<Dataset> dataset_;
    std::filesystem::path scratch_dir_;
    OffsetTable table_;
    bool have_table_ = false;
    BmfSplit split_;
    std::vector<std::unique_ptr<PagedFile>> batch_files_;
    bool preprocessed_ = false;
    double epoch_load_wall_ = 0;
};

struct RunOptions {
    std::size_t cache_pages = 1024;
    std::optional<double> f_star;       // enables rfvd and early stopping
    std::filesystem::path scratch_dir;  // required for the bmf strategy
    std::ostream* plan_dump = nullptr;  // receives epoch,batch,instance triples
};

/// Full training flow: strategy preprocessing, then epochs of
/// plan -> load -> mini-batch SGD updates until the target relative function
/// value difference or max_epochs. Model math is identical across overlap
/// modes; prefetch only changes timing.
RunResult run_training(const std::filesystem::path& dataset_path, const StrategyConfig& strategy,
                       const TrainConfig& train, const DeviceProfile& device,
                       const RunOptions& options);

struct ReferenceResult {
    double f_star = 0;               // polished minimum
    double sgd_final_objective = 0;  // objective after the long SGD phase
};

/// Reference minimum of the regularized objective: a long fully-shuffled SGD
/// run followed by a Newton polish with Armijo backtracking. Deterministic.
double reference_minimum(const std::filesystem::path& dataset_path, const TrainConfig& train,
                         std::uint32_t sgd_epochs = 500, std::uint32_t batches = 50,
                         std::uint64_t seed = 1);

/// In-memory variant used by tests and by reference_minimum itself.
ReferenceResult reference_minimum_records(std::span<const Record> records,
                                          std::uint32_t num_features, const TrainConfig& train,
                                          std::uint32_t sgd_epochs = 500,
                                          std::uint32_t batches = 50, std::uint64_t seed = 1);

/// Per-epoch rows followed by a one-row summary section. Doubles are printed
/// with enough digits to round-trip exactly.
void write_report_csv(std::ostream& out, const RunResult& result);

extern const char* const kEpochCsvHeader;
extern const char* const kSummaryCsvHeader;

} // namespace shufflebench

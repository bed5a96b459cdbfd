#include "shufflebench/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace shufflebench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct PointLoss {
    double loss;
    double dlds; // d loss / d score
};

PointLoss eval_loss(Loss loss, double y, double score) {
    const double m = y * score;
    if (loss == Loss::Logistic) {
        // log(1 + exp(-m)) and -y * sigmoid(-m), numerically stable
        if (m >= 0) {
            const double e = std::exp(-m);
            return {std::log1p(e), -y * (e / (1.0 + e))};
        }
        const double e = std::exp(m);
        return {-m + std::log1p(e), -y / (1.0 + e)};
    }
    const double h = 1.0 - m;
    if (h > 0)
        return {h * h, -2.0 * y * h};
    return {0.0, 0.0};
}

double record_score(const LinearModel& model, const Record& r) {
    double s = model.bias;
    if (r.format == DataFormat::Dense) {
        if (r.dense.size() != model.weights.size())
            throw std::invalid_argument("dimension mismatch between model and record");
        for (std::size_t j = 0; j < r.dense.size(); ++j)
            s += model.weights[j] * r.dense[j];
    } else {
        for (const auto& [index, value] : r.sparse) {
            if (index >= model.weights.size())
                throw std::invalid_argument("dimension mismatch between model and record");
            s += model.weights[index] * value;
        }
    }
    if (!std::isfinite(s))
        throw DivergenceError("non-finite score; model or input values out of range");
    return s;
}

void add_scaled_features(std::vector<double>& acc, const Record& r, double scale) {
    if (r.format == DataFormat::Dense) {
        for (std::size_t j = 0; j < r.dense.size(); ++j)
            acc[j] += scale * r.dense[j];
    } else {
        for (const auto& [index, value] : r.sparse)
            acc[index] += scale * value;
    }
}

double weight_norm_sq(const LinearModel& model) {
    double n = 0;
    for (double w : model.weights)
        n += w * w;
    return n;
}

// Capacity-1 blocking exchange between the loader and compute executors.
template <typename T>
class HandoffSlot {
  public:
    void put(T value) {
        std::unique_lock lock(mutex_);
        space_.wait(lock, [&] { return !item_.has_value() || closed_; });
        if (closed_)
            return;
        item_.emplace(std::move(value));
        ready_.notify_one();
    }

    std::optional<T> take() {
        std::unique_lock lock(mutex_);
        ready_.wait(lock, [&] { return item_.has_value() || closed_; });
        if (!item_.has_value())
            return std::nullopt;
        std::optional<T> out(std::move(*item_));
        item_.reset();
        space_.notify_one();
        return out;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        ready_.notify_all();
        space_.notify_all();
    }

  private:
    std::mutex mutex_;
    std::condition_variable ready_;
    std::condition_variable space_;
    std::optional<T> item_;
    bool closed_ = false;
};

} // namespace

std::string_view loss_name(Loss loss) {
    return loss == Loss::Logistic ? "logistic" : "squared-hinge";
}

Loss parse_loss(std::string_view name) {
    if (name == "logistic")
        return Loss::Logistic;
    if (name == "squared-hinge")
        return Loss::SquaredHinge;
    throw std::invalid_argument("unknown loss: " + std::string(name));
}

std::string_view overlap_name(OverlapMode mode) {
    return mode == OverlapMode::None ? "none" : "prefetch";
}

OverlapMode parse_overlap(std::string_view name) {
    if (name == "none")
        return OverlapMode::None;
    if (name == "prefetch")
        return OverlapMode::Prefetch;
    throw std::invalid_argument("unknown overlap mode: " + std::string(name));
}

void TrainConfig::validate() const {
    if (learning_rate < 0 || !std::isfinite(learning_rate))
        throw std::invalid_argument("learning_rate must be non-negative");
    if (lambda < 0 || !std::isfinite(lambda))
        throw std::invalid_argument("lambda must be non-negative");
    if (target_rfvd <= 0)
        throw std::invalid_argument("target_rfvd must be positive");
}

BatchGradient batch_gradient(const LinearModel& model, std::span<const Record> batch,
                             Loss loss, double lambda) {
    if (batch.empty())
        throw std::invalid_argument("empty batch");
    BatchGradient g;
    g.weights.assign(model.weights.size(), 0.0);
    double loss_sum = 0;
    for (const Record& r : batch) {
        const double s = record_score(model, r);
        const auto [l, dlds] = eval_loss(loss, r.label, s);
        loss_sum += l;
        g.bias += dlds;
        add_scaled_features(g.weights, r, dlds);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t j = 0; j < g.weights.size(); ++j)
        g.weights[j] = g.weights[j] * inv + 2.0 * lambda * model.weights[j];
    g.bias *= inv;
    g.batch_loss = loss_sum * inv + lambda * weight_norm_sq(model);
    return g;
}

double objective_value(const LinearModel& model, std::span<const Record> records, Loss loss,
                       double lambda) {
    if (records.empty())
        throw std::invalid_argument("empty record set");
    double loss_sum = 0;
    for (const Record& r : records)
        loss_sum += eval_loss(loss, r.label, record_score(model, r)).loss;
    return loss_sum / static_cast<double>(records.size()) + lambda * weight_norm_sq(model);
}

double relative_fvd(double f, double f_star) {
    if (f_star == 0)
        throw std::invalid_argument("relative_fvd undefined for f_star = 0");
    return std::abs(f - f_star) / std::abs(f_star);
}

double overlap_time(double t_load, double t_comp, OverlapMode mode) {
    if (t_load < 0 || t_comp < 0)
        throw std::invalid_argument("negative time component");
    return mode == OverlapMode::Prefetch ? std::min(t_load, t_comp) : 0.0;
}

double total_time(const TimeModel& tm) {
    if (tm.t_preprocess < 0 || tm.t_load < 0 || tm.t_comp < 0 || tm.t_overlapping < 0 ||
        tm.t_overlapping > std::min(tm.t_load, tm.t_comp))
        throw std::invalid_argument("time model invariant violated");
    return tm.t_preprocess +
           (tm.t_load + tm.t_comp - tm.t_overlapping) * static_cast<double>(tm.epochs);
}

StrategySession::StrategySession(const std::filesystem::path& dataset_path,
                                 StrategyConfig config, std::size_t cache_pages,
                                 std::filesystem::path scratch_dir)
    : config_(config), io_(cache_pages, config.page_size),
      scratch_dir_(std::move(scratch_dir)) {
    config_.validate();
    dataset_.emplace(dataset_path, io_);
    const std::uint64_t n = dataset_->header().num_instances;
    if (n > std::numeric_limits<std::uint32_t>::max())
        throw std::invalid_argument("dataset too large: instance ids are 32-bit");
    if (config_.batch_count > n)
        throw std::invalid_argument("batch count exceeds instance count");
}

std::uint64_t StrategySession::num_instances() const {
    return dataset_->header().num_instances;
}

double StrategySession::preprocess() {
    if (preprocessed_)
        throw std::logic_error("preprocess already ran for this session");
    const auto t0 = Clock::now();
    switch (config_.strategy) {
    case Strategy::NoShuffle:
    case Strategy::BoundedQueue:
        break;
    case Strategy::LirsInstance:
    case Strategy::LirsPage: {
        if (dataset_->header().format == DataFormat::Dense) {
            // Offsets follow from arithmetic; nothing is read.
            table_ = dense_offset_table(dataset_->header());
        } else {
            bool loaded = false;
            auto sidecar = dataset_->path();
            sidecar.replace_extension(".shfo");
            if (std::filesystem::exists(sidecar)) {
                // Index built earlier; pay a sequential sweep of the sidecar
                // instead of rescanning the dataset.
                PagedFile f(sidecar, io_, 0);
                const std::uint64_t size = f.size_bytes();
                std::uint64_t off = 0;
                while (off < size) {
                    const std::uint64_t chunk =
                        std::min(io_.page_size() - off % io_.page_size(), size - off);
                    f.positioned_read(off, chunk);
                    off += chunk;
                }
                OffsetTable t = load_offset_table(sidecar);
                if (t.entries.size() == dataset_->header().num_instances &&
                    t.data_begin() == dataset_->data_begin() &&
                    t.data_end() == dataset_->file().size_bytes()) {
                    table_ = std::move(t);
                    loaded = true;
                }
            }
            if (!loaded)
                table_ = build_offset_table(*dataset_);
        }
        have_table_ = true;
        break;
    }
    case Strategy::BlockMinimization: {
        if (scratch_dir_.empty())
            throw std::invalid_argument("bmf strategy requires a scratch directory");
        split_ = bmf_initial_split(*dataset_, config_.batch_count, config_.seed, scratch_dir_);
        batch_files_.reserve(split_.batch_files.size());
        for (const auto& p : split_.batch_files)
            batch_files_.push_back(
                std::make_unique<PagedFile>(p, io_, 0, PagedFile::FirstAccess::Random));
        break;
    }
    }
    preprocessed_ = true;
    return seconds_since(t0);
}

EpochPlan StrategySession::plan_epoch(std::uint32_t epoch) const {
    const auto n = static_cast<std::uint32_t>(num_instances());
    switch (config_.strategy) {
    case Strategy::NoShuffle:
        return plan_no_shuffle(n, config_.batch_count, epoch);
    case Strategy::BoundedQueue:
        return plan_bounded_queue(n, config_.batch_count, config_.queue_size, epoch,
                                  config_.seed);
    case Strategy::LirsInstance:
        return plan_lirs_instance(n, config_.batch_count, epoch, config_.seed);
    case Strategy::LirsPage:
        if (!have_table_)
            throw std::logic_error("lirs-page planning requires preprocess()");
        return plan_lirs_page(table_, config_.page_size, dataset_->data_begin(),
                              config_.batch_count, epoch, config_.seed);
    case Strategy::BlockMinimization:
        return plan_bmf(split_, epoch, config_.seed);
    }
    throw std::logic_error("unreachable");
}

void StrategySession::for_each_batch(
    const EpochPlan& plan,
    const std::function<void(std::size_t, std::vector<Record>&&)>& consume) {
    if (!preprocessed_)
        throw std::logic_error("for_each_batch requires preprocess()");
    switch (config_.strategy) {
    case Strategy::LirsInstance:
    case Strategy::LirsPage:
        load_plan_driven(plan, consume);
        return;
    case Strategy::NoShuffle:
    case Strategy::BoundedQueue:
        load_sequential(plan, consume);
        return;
    case Strategy::BlockMinimization:
        load_bmf(plan, consume);
        return;
    }
}

double StrategySession::take_epoch_load_wall() {
    const double v = epoch_load_wall_;
    epoch_load_wall_ = 0;
    return v;
}

void StrategySession::load_plan_driven(
    const EpochPlan& plan,
    const std::function<void(std::size_t, std::vector<Record>&&)>& consume) {
    for (std::size_t k = 0; k < plan.batches.size(); ++k) {
        const auto& ids = plan.batches[k];
        const auto t0 = Clock::now();
        std::vector<Record> records;
        records.reserve(ids.size());
        for (std::uint32_t id : ids)
            records.push_back(dataset_->read_record(id, table_.entries[id]));
        epoch_load_wall_ += seconds_since(t0);
        consume(k, std::move(records));
    }
}

void StrategySession::load_sequential(
    const EpochPlan& plan,
    const std::function<void(std::size_t, std::vector<Record>&&)>& consume) {
    // One sequential pass; a small reorder buffer (bounded by the queue size)
    // re-emits records in plan order.
    RecordScanner scanner = scan_dataset(*dataset_, /*accounted=*/true);
    std::unordered_map<std::uint32_t, Record> pending;
    std::uint32_t streamed = 0;
    for (std::size_t k = 0; k < plan.batches.size(); ++k) {
        const auto& ids = plan.batches[k];
        const auto t0 = Clock::now();
        std::vector<Record> records;
        records.reserve(ids.size());
        for (std::uint32_t id : ids) {
            if (id >= streamed) {
                while (streamed <= id) {
                    auto r = scanner.next();
                    if (!r)
                        throw std::runtime_error("sequential stream ended before plan did");
                    if (streamed == id)
                        records.push_back(std::move(*r));
                    else
                        pending.emplace(streamed, std::move(*r));
                    ++streamed;
                }
            } else {
                auto node = pending.extract(id);
                if (node.empty())
                    throw std::logic_error("plan revisits an instance within the epoch");
                records.push_back(std::move(node.mapped()));
            }
        }
        epoch_load_wall_ += seconds_since(t0);
        consume(k, std::move(records));
    }
}

void StrategySession::load_bmf(
    const EpochPlan& plan,
    const std::function<void(std::size_t, std::vector<Record>&&)>& consume) {
    const auto order =
        bmf_epoch_order(static_cast<std::uint32_t>(split_.membership.size()), plan.epoch,
                        config_.seed);
    const auto& header = dataset_->header();
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::uint32_t j = order[k];
        const auto& ids = split_.membership[j];
        const auto t0 = Clock::now();
        PagedFile& file = *batch_files_[j];
        RecordScanner scanner(file, header.format, header.num_features, 0, file.size_bytes(),
                              ids.size(), /*accounted=*/true, ids);
        std::vector<Record> records;
        records.reserve(ids.size());
        while (auto r = scanner.next())
            records.push_back(std::move(*r));
        epoch_load_wall_ += seconds_since(t0);
        consume(k, std::move(records));
    }
}

namespace {

void apply_update(LinearModel& model, const BatchGradient& g, double lr) {
    for (std::size_t j = 0; j < model.weights.size(); ++j)
        model.weights[j] -= lr * g.weights[j];
    model.bias -= lr * g.bias;
}

EpochRow make_row(std::uint32_t epoch, double objective, double rfvd, double t_load_sim,
                  double t_load_wall, double t_comp_wall, const IoStats& io) {
    EpochRow row;
    row.epoch = epoch;
    row.objective = objective;
    row.rfvd = rfvd;
    row.t_load_sim = t_load_sim;
    row.t_load_wall = t_load_wall;
    row.t_comp_wall = t_comp_wall;
    row.pages_seq = io.pages_read_seq;
    row.pages_rand = io.pages_read_rand;
    row.cache_hits = io.page_cache_hits;
    row.redundant_loads = io.redundant_page_loads;
    return row;
}

} // namespace

RunResult run_training(const std::filesystem::path& dataset_path,
                       const StrategyConfig& strategy, const TrainConfig& train,
                       const DeviceProfile& device, const RunOptions& options) {
    train.validate();
    device.validate();
    StrategySession session(dataset_path, strategy, options.cache_pages, options.scratch_dir);
    IoContext& io = session.io();

    RunResult result;
    result.f_star = options.f_star;

    io.begin_epoch();
    const double t_pre_wall = session.preprocess();
    result.preprocess_io = io.stats();
    const double t_pre_sim = estimate_time(result.preprocess_io, device);

    // Evaluation snapshot: objective measurements must not disturb the
    // simulated cache or the strategy's access pattern.
    const std::vector<Record> eval = load_all_records(session.dataset());
    LinearModel model{std::vector<double>(session.dataset().header().num_features, 0.0), 0.0};
    const double f_initial = objective_value(model, eval, train.loss, train.lambda);

    double load_sim_sum = 0, load_wall_sum = 0, comp_wall_sum = 0;
    for (std::uint32_t epoch = 0; epoch < train.max_epochs; ++epoch) {
        io.begin_epoch();
        const IoStats before = io.stats();
        const auto plan_t0 = Clock::now();
        const EpochPlan plan = session.plan_epoch(epoch);
        double load_wall = seconds_since(plan_t0);
        if (options.plan_dump)
            *options.plan_dump << dump_plan(plan);

        double comp_wall = 0;
        auto train_batch = [&](std::size_t, std::vector<Record>&& records) {
            if (records.empty())
                return;
            const auto t0 = Clock::now();
            const BatchGradient g =
                batch_gradient(model, records, train.loss, train.lambda);
            apply_update(model, g, train.learning_rate);
            comp_wall += seconds_since(t0);
        };

        bool overflowed = false;
        try {
            if (train.overlap_mode == OverlapMode::None) {
                session.for_each_batch(plan, train_batch);
            } else {
                // Loader executor owns the I/O context for the epoch; batches
                // cross through a capacity-1 exchange. Data order is identical
                // to the non-overlapped path.
                HandoffSlot<std::pair<std::size_t, std::vector<Record>>> slot;
                std::exception_ptr loader_error;
                std::thread loader([&] {
                    try {
                        session.for_each_batch(plan,
                                               [&](std::size_t k, std::vector<Record>&& r) {
                                                   slot.put({k, std::move(r)});
                                               });
                    } catch (...) {
                        loader_error = std::current_exception();
                    }
                    slot.close();
                });
                try {
                    while (auto item = slot.take())
                        train_batch(item->first, std::move(item->second));
                } catch (...) {
                    slot.close(); // unblock the loader before unwinding
                    loader.join();
                    throw;
                }
                loader.join();
                if (loader_error)
                    std::rethrow_exception(loader_error);
            }
        } catch (const DivergenceError&) {
            overflowed = true; // weights left the representable range mid-epoch
        }
        if (overflowed) {
            session.take_epoch_load_wall();
            result.diverged = true;
            break;
        }

        load_wall += session.take_epoch_load_wall();
        const IoStats epoch_io = io.stats() - before;
        const double load_sim = estimate_time(epoch_io, device);
        double f_epoch;
        try {
            f_epoch = objective_value(model, eval, train.loss, train.lambda);
        } catch (const DivergenceError&) {
            f_epoch = std::numeric_limits<double>::infinity();
        }
        const double rfvd = result.f_star ? relative_fvd(f_epoch, *result.f_star)
                                          : std::numeric_limits<double>::quiet_NaN();

        result.epochs.push_back(
            make_row(epoch, f_epoch, rfvd, load_sim, load_wall, comp_wall, epoch_io));
        load_sim_sum += load_sim;
        load_wall_sum += load_wall;
        comp_wall_sum += comp_wall;

        if (!std::isfinite(f_epoch) || f_epoch > 1e3 * f_initial) {
            result.diverged = true;
            break;
        }
        if (result.f_star && rfvd <= train.target_rfvd) {
            result.epochs_to_target = epoch + 1;
            break;
        }
    }

    result.training_io = io.stats() - result.preprocess_io;
    result.model = std::move(model);

    RunSummary& s = result.summary;
    s.strategy = strategy.strategy;
    s.device = device.name;
    s.overlap = train.overlap_mode;
    s.epochs = static_cast<std::uint32_t>(result.epochs.size());
    s.epochs_to_target = result.epochs_to_target;
    s.diverged = result.diverged;
    s.t_preprocess_sim = t_pre_sim;
    s.t_preprocess_wall = t_pre_wall;
    const double denom = s.epochs > 0 ? static_cast<double>(s.epochs) : 1.0;
    s.t_load_sim = load_sim_sum / denom;
    s.t_load_wall = load_wall_sum / denom;
    s.t_comp_wall = comp_wall_sum / denom;
    s.t_overlap_sim = overlap_time(s.t_load_sim, s.t_comp_wall, train.overlap_mode);
    s.t_overlap_wall = overlap_time(s.t_load_wall, s.t_comp_wall, train.overlap_mode);
    s.total_sim = total_time({s.t_preprocess_sim, s.t_load_sim, s.t_comp_wall, s.t_overlap_sim,
                              s.epochs});
    s.total_wall = total_time({s.t_preprocess_wall, s.t_load_wall, s.t_comp_wall,
                               s.t_overlap_wall, s.epochs});
    return result;
}

namespace {

// Gradient and generalized Hessian of the full objective in the augmented
// space (weights, bias). Hessian is symmetric D x D, row-major.
void full_gradient_hessian(const LinearModel& model, std::span<const Record> records,
                           Loss loss, double lambda, std::vector<double>& g,
                           std::vector<double>* H) {
    const std::size_t F = model.weights.size();
    const std::size_t D = F + 1;
    g.assign(D, 0.0);
    if (H)
        H->assign(D * D, 0.0);
    std::vector<double> x(D);
    for (const Record& r : records) {
        const double s = record_score(model, r);
        const double y = r.label;
        const double m = y * s;
        double dlds, d2;
        if (loss == Loss::Logistic) {
            const double p = m >= 0 ? std::exp(-m) / (1.0 + std::exp(-m))
                                    : 1.0 / (1.0 + std::exp(m)); // sigmoid(-m)
            dlds = -y * p;
            d2 = p * (1.0 - p);
        } else {
            const double h = 1.0 - m;
            dlds = h > 0 ? -2.0 * y * h : 0.0;
            d2 = h > 0 ? 2.0 : 0.0;
        }
        g[F] += dlds;
        if (r.format == DataFormat::Dense) {
            for (std::size_t j = 0; j < F; ++j)
                g[j] += dlds * r.dense[j];
        } else {
            for (const auto& [index, value] : r.sparse)
                g[index] += dlds * value;
        }
        if (H && d2 != 0.0) {
            std::fill(x.begin(), x.end(), 0.0);
            if (r.format == DataFormat::Dense) {
                for (std::size_t j = 0; j < F; ++j)
                    x[j] = r.dense[j];
            } else {
                for (const auto& [index, value] : r.sparse)
                    x[index] = value;
            }
            x[F] = 1.0;
            for (std::size_t a = 0; a < D; ++a) {
                const double va = d2 * x[a];
                if (va == 0.0)
                    continue;
                double* row = H->data() + a * D;
                for (std::size_t c = a; c < D; ++c)
                    row[c] += va * x[c];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(records.size());
    for (std::size_t j = 0; j < D; ++j)
        g[j] *= inv;
    for (std::size_t j = 0; j < F; ++j)
        g[j] += 2.0 * lambda * model.weights[j];
    if (H) {
        for (std::size_t a = 0; a < D; ++a)
            for (std::size_t c = a; c < D; ++c) {
                double v = (*H)[a * D + c] * inv;
                if (a == c)
                    v += (a < F ? 2.0 * lambda : 0.0) + 1e-10;
                (*H)[a * D + c] = v;
                (*H)[c * D + a] = v;
            }
    }
}

// In-place Cholesky solve of A x = b; returns false when A is not positive
// definite.
bool cholesky_solve(std::vector<double>& A, std::vector<double>& b, std::size_t D) {
    for (std::size_t j = 0; j < D; ++j) {
        double diag = A[j * D + j];
        for (std::size_t k = 0; k < j; ++k)
            diag -= A[j * D + k] * A[j * D + k];
        if (diag <= 0)
            return false;
        const double ljj = std::sqrt(diag);
        A[j * D + j] = ljj;
        for (std::size_t i = j + 1; i < D; ++i) {
            double v = A[i * D + j];
            for (std::size_t k = 0; k < j; ++k)
                v -= A[i * D + k] * A[j * D + k];
            A[i * D + j] = v / ljj;
        }
    }
    for (std::size_t i = 0; i < D; ++i) {
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k)
            v -= A[i * D + k] * b[k];
        b[i] = v / A[i * D + i];
    }
    for (std::size_t ii = D; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double v = b[i];
        for (std::size_t k = i + 1; k < D; ++k)
            v -= A[k * D + i] * b[k];
        b[i] = v / A[i * D + i];
    }
    return true;
}

void newton_polish(LinearModel& model, std::span<const Record> records, Loss loss,
                   double lambda) {
    const std::size_t F = model.weights.size();
    const std::size_t D = F + 1;
    std::vector<double> g, H, step;
    double f = objective_value(model, records, loss, lambda);
    int stalls = 0;
    for (int iter = 0; iter < 200; ++iter) {
        full_gradient_hessian(model, records, loss, lambda, g, &H);
        double gmax = 0;
        for (double v : g)
            gmax = std::max(gmax, std::abs(v));
        if (gmax < 1e-11 * std::max(1.0, std::abs(f)))
            break;
        step = g;
        double ridge = 0;
        while (!cholesky_solve(H, step, D)) {
            ridge = ridge == 0 ? 1e-8 : ridge * 100;
            if (ridge > 1.0)
                return;
            full_gradient_hessian(model, records, loss, lambda, g, &H);
            for (std::size_t j = 0; j < D; ++j)
                H[j * D + j] += ridge;
            step = g;
        }
        double gtd = 0;
        for (std::size_t j = 0; j < D; ++j) {
            step[j] = -step[j];
            gtd += g[j] * step[j];
        }
        double t = 1.0;
        LinearModel trial = model;
        double ft = f;
        bool accepted = false;
        while (t >= 1e-12) {
            for (std::size_t j = 0; j < F; ++j)
                trial.weights[j] = model.weights[j] + t * step[j];
            trial.bias = model.bias + t * step[F];
            ft = objective_value(trial, records, loss, lambda);
            if (ft <= f + 1e-4 * t * gtd) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted)
            break;
        model = trial;
        if (f - ft < 1e-15 * std::max(1.0, std::abs(f))) {
            if (++stalls >= 2) {
                f = ft;
                break;
            }
        } else {
            stalls = 0;
        }
        f = ft;
    }
}

} // namespace

ReferenceResult reference_minimum_records(std::span<const Record> records,
                                          std::uint32_t num_features, const TrainConfig& train,
                                          std::uint32_t sgd_epochs, std::uint32_t batches,
                                          std::uint64_t seed) {
    if (records.empty())
        throw std::invalid_argument("empty record set");
    const auto n = static_cast<std::uint32_t>(records.size());
    const std::uint32_t b = std::max<std::uint32_t>(1, std::min(batches, n));
    LinearModel model{std::vector<double>(num_features, 0.0), 0.0};

    // Long fully-shuffled run, constant rate for a warmup stretch and then a
    // harmonic decay, followed by a Newton polish.
    std::vector<double> gw(num_features);
    const double warmup = std::max(1.0, sgd_epochs / 20.0);
    for (std::uint32_t epoch = 0; epoch < sgd_epochs; ++epoch) {
        SplitMix64 rng = stream_for(seed, RngStream::Plan, epoch);
        const auto perm = fisher_yates(n, rng);
        const auto slices = slice_into_batches(perm, b);
        const double lr =
            train.learning_rate * std::min(1.0, warmup / (1.0 + static_cast<double>(epoch)));
        for (const auto& ids : slices) {
            if (ids.empty())
                continue;
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0;
            for (std::uint32_t id : ids) {
                const Record& r = records[id];
                const double s = record_score(model, r);
                const double dlds = eval_loss(train.loss, r.label, s).dlds;
                gb += dlds;
                if (r.format == DataFormat::Dense) {
                    for (std::size_t j = 0; j < r.dense.size(); ++j)
                        gw[j] += dlds * r.dense[j];
                } else {
                    for (const auto& [index, value] : r.sparse)
                        gw[index] += dlds * value;
                }
            }
            const double inv = 1.0 / static_cast<double>(ids.size());
            for (std::size_t j = 0; j < num_features; ++j)
                model.weights[j] -= lr * (gw[j] * inv + 2.0 * train.lambda * model.weights[j]);
            model.bias -= lr * gb * inv;
        }
    }
    ReferenceResult out;
    out.sgd_final_objective = objective_value(model, records, train.loss, train.lambda);
    newton_polish(model, records, train.loss, train.lambda);
    out.f_star = objective_value(model, records, train.loss, train.lambda);
    return out;
}

double reference_minimum(const std::filesystem::path& dataset_path, const TrainConfig& train,
                         std::uint32_t sgd_epochs, std::uint32_t batches, std::uint64_t seed) {
    IoContext io(1);
    Dataset ds(dataset_path, io);
    const auto records = load_all_records(ds);
    return reference_minimum_records(records, ds.header().num_features, train, sgd_epochs,
                                     batches, seed)
        .f_star;
}

const char* const kEpochCsvHeader =
    "epoch,objective,rfvd,t_load_sim,t_load_wall,t_comp_wall,pages_seq,pages_rand,"
    "cache_hits,redundant_loads";
const char* const kSummaryCsvHeader =
    "strategy,device,overlap,epochs,epochs_to_target,t_preprocess_sim,t_preprocess_wall,"
    "t_load_sim,t_load_wall,t_comp_wall,t_overlap_sim,t_overlap_wall,total_sim,total_wall,"
    "diverged";

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void write_report_csv(std::ostream& out, const RunResult& result) {
    // Emitted totals must always recompute from their own components.
    const RunSummary& check = result.summary;
    if (check.total_sim != total_time({check.t_preprocess_sim, check.t_load_sim,
                                       check.t_comp_wall, check.t_overlap_sim,
                                       check.epochs}) ||
        check.total_wall != total_time({check.t_preprocess_wall, check.t_load_wall,
                                        check.t_comp_wall, check.t_overlap_wall,
                                        check.epochs}))
        throw std::logic_error("summary totals inconsistent with their components");

    out << kEpochCsvHeader << "\n";
    for (const auto& row : result.epochs) {
        out << row.epoch << ',' << fmt_double(row.objective) << ',' << fmt_double(row.rfvd)
            << ',' << fmt_double(row.t_load_sim) << ',' << fmt_double(row.t_load_wall) << ','
            << fmt_double(row.t_comp_wall) << ',' << row.pages_seq << ',' << row.pages_rand
            << ',' << row.cache_hits << ',' << row.redundant_loads << "\n";
    }
    const RunSummary& s = result.summary;
    out << kSummaryCsvHeader << "\n";
    out << strategy_name(s.strategy) << ',' << s.device << ',' << overlap_name(s.overlap)
        << ',' << s.epochs << ','
        << (s.epochs_to_target ? std::to_string(*s.epochs_to_target) : std::string("none"))
        << ',' << fmt_double(s.t_preprocess_sim) << ',' << fmt_double(s.t_preprocess_wall)
        << ',' << fmt_double(s.t_load_sim) << ',' << fmt_double(s.t_load_wall) << ','
        << fmt_double(s.t_comp_wall) << ',' << fmt_double(s.t_overlap_sim) << ','
        << fmt_double(s.t_overlap_wall) << ',' << fmt_double(s.total_sim) << ','
        << fmt_double(s.total_wall) << ',' << (s.diverged ? 1 : 0) << "\n";
}

} // namespace shufflebench

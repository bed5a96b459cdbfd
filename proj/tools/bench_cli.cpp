// Command-line front end: dataset generation, offset-table indexing, single
// benchmark runs, and strategy x device sweeps emitting CSV reports.

#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "shufflebench/dataset.hpp"
#include "shufflebench/shuffle.hpp"
#include "shufflebench/storage_io.hpp"
#include "shufflebench/trainer.hpp"

namespace sb = shufflebench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitDiverged = 4;

std::filesystem::path resolve(const std::filesystem::path& workdir,
                              const std::filesystem::path& p) {
    if (p.empty() || p.is_absolute())
        return p;
    return workdir / p;
}

sb::DeviceProfile resolve_device_arg(const std::filesystem::path& workdir,
                                     const std::string& arg) {
    if (arg == "hdd" || arg == "ssd" || arg == "optane")
        return sb::builtin_device(arg);
    return sb::load_device_profile(resolve(workdir, arg));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

struct CommonRunArgs {
    std::string data;
    std::string device = "hdd";
    std::string strategy = "lirs-instance";
    std::uint32_t batches = 1;
    std::uint32_t queue = 1;
    std::uint64_t page_size = sb::kDefaultPageSize;
    std::size_t cache_pages = 1024;
    double lr = 0.1;
    double lambda = 1e-4;
    std::string loss = "logistic";
    std::uint32_t max_epochs = 50;
    double target_rfvd = 1e-2;
    std::uint64_t seed = 0;
    std::string overlap = "none";
    std::optional<double> fstar;
    bool skip_fstar = false;
};

void add_train_flags(CLI::App* cmd, CommonRunArgs& a) {
    cmd->add_option("--device", a.device, "hdd|ssd|optane or a profile file");
    cmd->add_option("--batches", a.batches, "number of batches per epoch");
    cmd->add_option("--q", a.queue, "bounded shuffle queue size");
    cmd->add_option("--page-size", a.page_size, "simulated page size in bytes");
    cmd->add_option("--cache-pages", a.cache_pages, "simulated page cache capacity");
    cmd->add_option("--lr", a.lr, "learning rate");
    cmd->add_option("--lambda", a.lambda, "L2 coefficient");
    cmd->add_option("--loss", a.loss, "logistic|squared-hinge");
    cmd->add_option("--max-epochs", a.max_epochs, "epoch cap");
    cmd->add_option("--target-rfvd", a.target_rfvd, "stop when rfvd reaches this");
    cmd->add_option("--seed", a.seed, "shuffling seed");
    cmd->add_option("--overlap", a.overlap, "none|prefetch");
    cmd->add_option("--fstar", a.fstar, "reference minimum (skips the reference run)");
    cmd->add_flag("--skip-fstar", a.skip_fstar,
                  "train without a reference minimum (no early stop)");
}

sb::StrategyConfig make_strategy_config(const CommonRunArgs& a) {
    sb::StrategyConfig cfg;
    cfg.strategy = sb::parse_strategy(a.strategy);
    cfg.batch_count = a.batches;
    cfg.queue_size = a.queue;
    cfg.page_size = a.page_size;
    cfg.seed = a.seed;
    return cfg;
}

sb::TrainConfig make_train_config(const CommonRunArgs& a) {
    sb::TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.lambda = a.lambda;
    cfg.loss = sb::parse_loss(a.loss);
    cfg.max_epochs = a.max_epochs;
    cfg.target_rfvd = a.target_rfvd;
    cfg.overlap_mode = sb::parse_overlap(a.overlap);
    return cfg;
}

int cmd_gen(const std::filesystem::path& workdir, std::uint64_t n, std::uint32_t f,
            const std::string& format, std::optional<std::uint32_t> nnz, double margin,
            std::uint64_t seed, const std::string& out) {
    sb::SyntheticSpec spec;
    spec.n = n;
    spec.f = f;
    if (format == "dense")
        spec.format = sb::DataFormat::Dense;
    else if (format == "sparse")
        spec.format = sb::DataFormat::Sparse;
    else
        throw std::invalid_argument("format must be dense or sparse");
    spec.nnz_per_record = nnz;
    spec.margin = margin;
    spec.seed = seed;
    sb::generate_synthetic(spec, resolve(workdir, out));
    std::printf("N=%llu F=%u %s\n", static_cast<unsigned long long>(n), f, format.c_str());
    return kExitOk;
}

void require_file(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p))
        throw std::invalid_argument("no such file: " + p.string());
}

int cmd_index(const std::filesystem::path& workdir, const std::string& data,
              std::string out) {
    sb::IoContext io(1);
    require_file(resolve(workdir, data));
    sb::Dataset ds(resolve(workdir, data), io);
    const sb::OffsetTable table = sb::build_offset_table(ds);
    std::filesystem::path out_path;
    if (out.empty()) {
        out_path = resolve(workdir, data);
        out_path.replace_extension(".shfo");
    } else {
        out_path = resolve(workdir, out);
    }
    sb::save_offset_table(table, out_path);
    std::printf("indexed %zu records, %llu pages scanned -> %s\n", table.entries.size(),
                static_cast<unsigned long long>(io.stats().pages_read_total()),
                out_path.string().c_str());
    return kExitOk;
}

double obtain_fstar(const std::filesystem::path& data, const sb::TrainConfig& train) {
    return sb::reference_minimum(data, train);
}

int cmd_run(const std::filesystem::path& workdir, const CommonRunArgs& a,
            const std::string& out, const std::string& dump_plan_path) {
    const auto data = resolve(workdir, a.data);
    require_file(data);
    const auto device = resolve_device_arg(workdir, a.device);
    const auto scfg = make_strategy_config(a);
    const auto tcfg = make_train_config(a);

    sb::RunOptions opts;
    opts.cache_pages = a.cache_pages;
    opts.scratch_dir = workdir / ("scratch-" + std::string(sb::strategy_name(scfg.strategy)) +
                                  "-" + std::to_string(a.seed));
    if (a.fstar)
        opts.f_star = *a.fstar;
    else if (!a.skip_fstar)
        opts.f_star = obtain_fstar(data, tcfg);

    std::ofstream dump;
    if (!dump_plan_path.empty()) {
        dump.open(resolve(workdir, dump_plan_path), std::ios::trunc);
        if (!dump)
            throw std::runtime_error("cannot open plan dump file");
        opts.plan_dump = &dump;
    }

    const sb::RunResult result = sb::run_training(data, scfg, tcfg, device, opts);

    std::ofstream report(resolve(workdir, out), std::ios::trunc);
    if (!report)
        throw std::runtime_error("cannot open report file: " + out);
    sb::write_report_csv(report, result);

    const auto& s = result.summary;
    std::printf("strategy=%s device=%s epochs=%u epochs_to_target=%s total_sim=%s "
                "total_wall=%s\n",
                std::string(sb::strategy_name(s.strategy)).c_str(), s.device.c_str(), s.epochs,
                s.epochs_to_target ? std::to_string(*s.epochs_to_target).c_str() : "none",
                fmt_double(s.total_sim).c_str(), fmt_double(s.total_wall).c_str());
    if (result.diverged) {
        std::fprintf(stderr, "training diverged\n");
        return kExitDiverged;
    }
    return kExitOk;
}

struct SweepCell {
    std::string strategy;
    std::string device;
    std::uint64_t seed;
    bool failed = false;
    sb::RunSummary summary;
};

int cmd_sweep(const std::filesystem::path& workdir, const CommonRunArgs& a,
              const std::string& strategies_csv, const std::string& devices_csv,
              const std::string& seeds_csv, const std::string& baseline,
              bool parallel, const std::string& out) {
    const auto strategies = split_list(strategies_csv);
    const auto devices = split_list(devices_csv);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_csv))
        seeds.push_back(std::stoull(s));
    if (strategies.empty() || devices.empty() || seeds.empty())
        throw std::invalid_argument("sweep needs at least one strategy, device and seed");

    const auto colon = baseline.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("--baseline must look like strategy:device");
    const std::string base_strategy = baseline.substr(0, colon);
    const std::string base_device = baseline.substr(colon + 1);
    bool base_found = false;
    for (const auto& s : strategies)
        for (const auto& d : devices)
            if (s == base_strategy && d == base_device)
                base_found = true;
    if (!base_found)
        throw std::invalid_argument("baseline cell is not part of the sweep");

    const auto data = resolve(workdir, a.data);
    require_file(data);
    const auto tcfg = make_train_config(a);
    std::optional<double> f_star;
    if (a.fstar)
        f_star = *a.fstar;
    else if (!a.skip_fstar)
        f_star = obtain_fstar(data, tcfg);

    std::vector<SweepCell> cells;
    for (const auto& strategy : strategies)
        for (const auto& device : devices)
            for (std::uint64_t seed : seeds)
                cells.push_back({strategy, device, seed, false, {}});

    auto run_cell = [&](SweepCell& cell, std::size_t index) {
        try {
            CommonRunArgs cell_args = a;
            cell_args.strategy = cell.strategy;
            cell_args.device = cell.device;
            cell_args.seed = cell.seed;
            const auto scfg = make_strategy_config(cell_args);
            const auto device = resolve_device_arg(workdir, cell.device);
            sb::RunOptions opts;
            opts.cache_pages = a.cache_pages;
            opts.f_star = f_star;
            opts.scratch_dir = workdir / ("scratch-cell-" + std::to_string(index));
            const sb::RunResult r = sb::run_training(data, scfg, tcfg, device, opts);
            cell.summary = r.summary;
            cell.failed = r.diverged;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "cell %s:%s seed=%llu failed: %s\n", cell.strategy.c_str(),
                         cell.device.c_str(), static_cast<unsigned long long>(cell.seed),
                         e.what());
            cell.failed = true;
        }
    };

    if (parallel) {
        std::vector<std::future<void>> futures;
        futures.reserve(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i)
            futures.push_back(std::async(std::launch::async,
                                         [&run_cell, &cells, i] { run_cell(cells[i], i); }));
        for (auto& f : futures)
            f.get();
    } else {
        for (std::size_t i = 0; i < cells.size(); ++i)
            run_cell(cells[i], i);
    }

    // Per-seed normalization against the baseline cell.
    std::map<std::uint64_t, double> base_total;
    bool baseline_ok = false;
    for (const auto& cell : cells)
        if (cell.strategy == base_strategy && cell.device == base_device && !cell.failed) {
            base_total[cell.seed] = cell.summary.total_sim;
            baseline_ok = true;
        }

    std::ofstream table(resolve(workdir, out), std::ios::trunc);
    if (!table)
        throw std::runtime_error("cannot open sweep output: " + out);
    table << "strategy,device,seed,status,epochs,epochs_to_target,t_preprocess_sim,"
             "t_load_sim,t_comp_wall,total_sim,normalized\n";
    for (const auto& cell : cells) {
        table << cell.strategy << ',' << cell.device << ',' << cell.seed << ',';
        if (cell.failed) {
            table << "FAIL,,,,,,FAIL\n";
            continue;
        }
        const auto& s = cell.summary;
        table << "ok," << s.epochs << ','
              << (s.epochs_to_target ? std::to_string(*s.epochs_to_target)
                                     : std::string("none"))
              << ',' << fmt_double(s.t_preprocess_sim) << ',' << fmt_double(s.t_load_sim)
              << ',' << (parallel ? std::string() : fmt_double(s.t_comp_wall)) << ','
              << fmt_double(s.total_sim) << ',';
        const auto base = base_total.find(cell.seed);
        if (base == base_total.end())
            table << "FAIL";
        else
            table << fmt_double(s.total_sim / base->second);
        table << "\n";
    }
    if (!baseline_ok) {
        std::fprintf(stderr, "baseline cell failed; normalization incomplete\n");
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"out-of-core training-data shuffling benchmark"};
    app.require_subcommand(1);

    std::string workdir_flag = ".";
    app.add_option("--workdir", workdir_flag, "base directory for relative paths");

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::uint64_t gen_n = 1;
    std::uint32_t gen_f = 1;
    std::string gen_format = "dense";
    std::optional<std::uint32_t> gen_nnz;
    double gen_margin = 0.1;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "instances")->required();
    gen->add_option("--f", gen_f, "features")->required();
    gen->add_option("--format", gen_format, "dense|sparse");
    gen->add_option("--nnz", gen_nnz, "max nonzeros per sparse record");
    gen->add_option("--margin", gen_margin, "separation margin");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output dataset path")->required();

    // index
    auto* index = app.add_subcommand("index", "build the offset-table sidecar");
    std::string index_data, index_out;
    index->add_option("--data", index_data, "dataset path")->required();
    index->add_option("--out", index_out, "sidecar path (default: dataset with .shfo)");

    // run
    auto* run = app.add_subcommand("run", "run one training benchmark");
    CommonRunArgs run_args;
    run->add_option("--data", run_args.data, "dataset path")->required();
    run->add_option("--strategy", run_args.strategy,
                    "none|queue|bmf|lirs-instance|lirs-page");
    add_train_flags(run, run_args);
    std::string run_out = "report.csv";
    std::string run_dump;
    run->add_option("--out", run_out, "report CSV path");
    run->add_option("--dump-plan", run_dump, "write epoch,batch,instance triples here");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run a strategy x device x seed grid");
    CommonRunArgs sweep_args;
    std::string sweep_strategies, sweep_devices, sweep_seeds = "0";
    std::string sweep_baseline, sweep_out = "sweep.csv";
    bool sweep_parallel = false;
    sweep->add_option("--data", sweep_args.data, "dataset path")->required();
    sweep->add_option("--strategies", sweep_strategies, "comma-separated strategies")
        ->required();
    sweep->add_option("--devices", sweep_devices, "comma-separated devices")->required();
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");
    sweep->add_option("--baseline", sweep_baseline, "strategy:device to normalize against")
        ->required();
    sweep->add_flag("--parallel", sweep_parallel,
                    "run cells concurrently (wall columns omitted)");
    add_train_flags(sweep, sweep_args);
    sweep->add_option("--out", sweep_out, "sweep CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    const std::filesystem::path workdir = workdir_flag;
    try {
        if (gen->parsed())
            return cmd_gen(workdir, gen_n, gen_f, gen_format, gen_nnz, gen_margin, gen_seed,
                           gen_out);
        if (index->parsed())
            return cmd_index(workdir, index_data, index_out);
        if (run->parsed())
            return cmd_run(workdir, run_args, run_out, run_dump);
        if (sweep->parsed())
            return cmd_sweep(workdir, sweep_args, sweep_strategies, sweep_devices, sweep_seeds,
                             sweep_baseline, sweep_parallel, sweep_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

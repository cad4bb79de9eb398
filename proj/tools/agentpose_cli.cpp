#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "CLI11.hpp"

#include "agentpose/config.hpp"
#include "agentpose/error.hpp"
#include "agentpose/pipeline.hpp"

namespace {

using namespace agentpose;
using Runner = std::function<void(const ExperimentConfig&, const std::filesystem::path&)>;

struct Args {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

int code(ExitCode c) { return static_cast<int>(c); }

int run(const Args& args, const Runner& runner) {
  try {
    ExperimentConfig cfg = load_config(args.config);
    cfg.seed = args.seed;
    validate(cfg);
    const std::filesystem::path out(args.out);
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    std::ofstream os(out / "config.toml");
    if (!(os << to_toml(cfg))) throw IoError("cannot write " + (out / "config.toml").string());
    os.close();
    runner(cfg, out);
    return code(ExitCode::kOk);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return code(ExitCode::kConfig);
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return code(ExitCode::kConfig);
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return code(ExitCode::kIo);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return code(ExitCode::kNumeric);
  } catch (const UndefinedMetric& e) {
    std::fprintf(stderr, "undefined metric: %s\n", e.what());
    return code(ExitCode::kNumeric);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return code(ExitCode::kFailure);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-agent distillation on synthetic pose data"};
  app.require_subcommand(1);
  Args args;
  Runner runner;

  const std::pair<const char*, Runner> commands[] = {
      {"train-teacher", pipeline::run_train_teacher}, {"distill", pipeline::run_distill},
      {"eval", pipeline::run_eval},                   {"sweep", pipeline::run_sweep},
      {"gen-data", pipeline::run_gen_data},
  };
  const char* help[] = {"train the teacher network", "distill a student from a teacher checkpoint",
                        "evaluate saved checkpoints", "sweep one hyperparameter over seeds",
                        "generate the synthetic dataset"};
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, help[i]);
    sub->add_option("--config", args.config, "TOML config file")->required();
    sub->add_option("--seed", args.seed, "run seed")->required();
    sub->add_option("--out", args.out, "output directory")->required();
    sub->callback([&runner, r = commands[i].second] { runner = r; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::kConfig);
  }
  return run(args, runner);
}

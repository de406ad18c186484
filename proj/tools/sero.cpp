// Command-line driver for the seroprevalence pipeline.

#include <cstdlib>
#include <iostream>
#include <string>

#include <boost/program_options.hpp>

#include "sero/pipeline.hpp"

namespace po = boost::program_options;

namespace {

void usage(std::ostream& out, const po::options_description& opts) {
  out << "usage: sero <command> --config FILE [options]\n\ncommands:\n";
  for (const auto& [name, stage] : sero::stage_names()) out << "  " << name << "\n";
  out << "  run-all\n\n" << opts;
}

}  // namespace

int main(int argc, char** argv) {
  po::options_description opts("options");
  opts.add_options()
      ("help,h", "show this message")
      ("config,c", po::value<std::string>(), "pipeline configuration (JSON)")
      ("seed", po::value<std::uint64_t>(), "override mcmc.seed")
      ("out", po::value<std::string>(), "override output.dir")
      ("stride", po::value<int>(), "override output.stride (days between trend dates)")
      ("allow-monotonic-repair", po::bool_switch(), "repair decreasing cumulative counts instead of failing")
      ("joint", po::bool_switch(), "update vaccination seroprevalence jointly with the infection model");
  po::options_description hidden;
  hidden.add_options()("command", po::value<std::string>());
  po::options_description all;
  all.add(opts).add(hidden);
  po::positional_options_description pos;
  pos.add("command", 1);

  po::variables_map vm;
  try {
    po::store(po::command_line_parser(argc, argv).options(all).positional(pos).run(), vm);
    po::notify(vm);
  } catch (const po::error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    usage(std::cerr, opts);
    return 2;
  }
  if (vm.count("help")) {
    usage(std::cout, opts);
    return 0;
  }
  if (!vm.count("command")) {
    std::cerr << "usage error: missing command\n";
    usage(std::cerr, opts);
    return 2;
  }
  if (!vm.count("config")) {
    std::cerr << "usage error: missing required option '--config'\n";
    return 2;
  }

  const std::string command = vm["command"].as<std::string>();
  std::optional<sero::Stage> stage;
  for (const auto& [name, s] : sero::stage_names())
    if (name == command) stage = s;
  if (!stage && command != "run-all") {
    std::cerr << "usage error: unknown command '" << command << "'\n";
    usage(std::cerr, opts);
    return 2;
  }

  sero::PipelineConfig cfg;
  try {
    cfg = sero::load_config(vm["config"].as<std::string>());
    if (vm.count("seed")) cfg.mcmc.seed = vm["seed"].as<std::uint64_t>();
    if (vm.count("out")) cfg.out_dir = vm["out"].as<std::string>();
    if (vm.count("stride")) cfg.stride = vm["stride"].as<int>();
    if (cfg.stride < 1) throw sero::Error(sero::ErrorCode::Config, "--stride must be positive");
    cfg.allow_monotonic_repair = vm["allow-monotonic-repair"].as<bool>();
    cfg.joint = cfg.joint || vm["joint"].as<bool>();
  } catch (const sero::Error& e) {
    if (e.code() == sero::ErrorCode::Config) {
      std::cerr << "usage error: " << e.message() << "\n";
      return 2;
    }
    std::cerr << "error [" << sero::to_string(e.code()) << "]: " << e.message() << "\n";
    return 1;
  }

  try {
    if (stage)
      sero::run_stage(*stage, cfg);
    else
      sero::run_all(cfg);
  } catch (const sero::Error& e) {
    std::cerr << "error [" << sero::to_string(e.code()) << "]: " << e.message() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [Internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

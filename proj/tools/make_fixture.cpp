// Writes the bundled synthetic fixture: a small corpus simulated from known
// parameter values, its vaccine catalog, a pipeline config and the truth.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <boost/program_options.hpp>

#include "sero/catalog.hpp"
#include "sero/synthetic.hpp"

namespace po = boost::program_options;

int main(int argc, char** argv) {
  po::options_description opts("options");
  opts.add_options()
      ("help,h", "show this message")
      ("out", po::value<std::string>()->default_value("fixtures/synthetic"), "output directory")
      ("seed", po::value<std::uint64_t>()->default_value(7), "simulation seed");
  po::variables_map vm;
  try {
    po::store(po::parse_command_line(argc, argv, opts), vm);
    po::notify(vm);
  } catch (const po::error& e) {
    std::cerr << "usage error: " << e.what() << "\n" << opts;
    return 2;
  }
  if (vm.count("help")) {
    std::cout << "usage: make_fixture [options]\n" << opts;
    return 0;
  }
  const std::filesystem::path out = vm["out"].as<std::string>();

  sero::SyntheticOptions opt;
  opt.seed = vm["seed"].as<std::uint64_t>();
  opt.n_countries = 5;
  opt.n_days = 120;
  opt.n_survey_countries = 5;
  opt.surveys_per_country = 2;
  opt.first_survey_day = 60;
  opt.attack_rate_lo = 0.03;
  opt.attack_rate_hi = 0.15;
  opt.validation_positives = 300;
  opt.validation_negatives = 1000;
  // Published phase-3 counts for the three fixture vaccines.
  opt.trials = {{"Pfizer", 1, 21669, 39, 21686, 82},
                {"Pfizer", 2, 21669, 11, 21686, 193},
                {"AstraZeneca", 1, 9257, 32, 9237, 89},
                {"AstraZeneca", 2, 8597, 84, 8581, 248},
                {"Janssen", 1, 19630, 116, 19691, 348}};

  try {
    const auto data = sero::generate_synthetic(opt);
    sero::write_corpus(data.corpus, out / "data");
    {
      std::ofstream f(out / "vaccine_catalog.csv", std::ios::binary);
      sero::write_catalog(data.corpus.catalog, f);
    }
    const nlohmann::json config = {
        {"paths", {{"data", "data"}, {"catalog", "vaccine_catalog.csv"}}},
        {"mcmc", {{"chains", 4}, {"iters", 4000}, {"burnin", 2000}, {"seed", 20210731}}},
        {"model", {{"delta", 21}, {"accuracy_concentration", 200.0}, {"theta_v_pool", 200}}},
        {"output", {{"dir", "out"}, {"stride", 1}, {"draws", 400}, {"svg", true}}}};
    std::ofstream(out / "config.json", std::ios::binary) << config.dump(2) << "\n";
    std::ofstream(out / "truth.json", std::ios::binary) << data.truth.dump(2) << "\n";
  } catch (const sero::Error& e) {
    std::cerr << "error [" << sero::to_string(e.code()) << "]: " << e.message() << "\n";
    return 1;
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

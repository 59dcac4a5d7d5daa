// codetensor CLI: drive the texture-tensor detection pipeline stage by stage
// or end to end. Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 training divergence.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codetensor/pipeline.hpp"

namespace {

codetensor::PipelineConfig make_config(const std::string& config_path,
                                       const std::vector<std::string>& sets,
                                       const std::string& out_dir) {
  codetensor::PipelineConfig cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw codetensor::ConfigError("--set expects key=value, got '" + kv +
                                    "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  cfg.apply_env();
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"codetensor: texture-tensor malware detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  app.add_option("-c,--config", config_path,
                 "key=value config file (unknown keys are rejected)");
  app.add_option("-s,--set", sets, "override one config key, e.g. gan.m=4");
  app.add_option("-o,--out", out_dir, "output directory (paths.out)");

  auto* c_synth =
      app.add_subcommand("synth", "synthesize the corpus and the manifest");
  auto* c_encode =
      app.add_subcommand("encode", "B2M-encode binaries to grayscale images");
  auto* c_cut =
      app.add_subcommand("cut", "GLCM self-growing texture segmentation");
  auto* c_select =
      app.add_subcommand("select", "LSH index + significant-segment selection");
  auto* c_compress =
      app.add_subcommand("compress", "t-SVD compression to feature slices");
  auto* c_train_det = app.add_subcommand(
      "train-detector", "fit the configured detectors on the detector pool");
  auto* c_train_gan = app.add_subcommand(
      "train-gan", "adversarial training against the Black-Bone detector");
  auto* c_eval = app.add_subcommand(
      "evaluate", "original vs retrained detectors on the test split");
  auto* c_report =
      app.add_subcommand("report", "render the report table and plot series");
  auto* c_pipeline = app.add_subcommand("pipeline", "run all stages in order");
  for (CLI::App* sub : {c_synth, c_encode, c_cut, c_select, c_compress,
                        c_train_det, c_train_gan, c_eval, c_report, c_pipeline})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const codetensor::PipelineConfig cfg =
        make_config(config_path, sets, out_dir);
    if (c_synth->parsed()) codetensor::pipeline_synth(cfg);
    if (c_encode->parsed()) codetensor::pipeline_encode(cfg);
    if (c_cut->parsed()) codetensor::pipeline_cut(cfg);
    if (c_select->parsed()) codetensor::pipeline_select(cfg);
    if (c_compress->parsed()) codetensor::pipeline_compress(cfg);
    if (c_train_det->parsed()) codetensor::pipeline_train_detector(cfg);
    if (c_train_gan->parsed()) codetensor::pipeline_train_gan(cfg);
    if (c_eval->parsed()) codetensor::pipeline_evaluate(cfg);
    if (c_report->parsed()) codetensor::pipeline_report(cfg);
    if (c_pipeline->parsed()) codetensor::run_pipeline(cfg);
    return 0;
  } catch (const codetensor::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what()
              << " (last good checkpoint saved)\n";
    return 4;
  } catch (const codetensor::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const codetensor::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}

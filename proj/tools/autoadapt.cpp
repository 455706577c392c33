#include "autoadapt/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace autoadapt;

namespace {

const char *kConfigHelp = R"(Config file (JSON). Every field is optional; defaults in brackets.
  global_seed                 64-bit seed for everything [1]
  workers                     candidate evaluation threads [1]; env AUTOADAPT_WORKERS overrides
  out                         output directory [autoadapt_out]
  dataset.image_size          pixels per side, >= 16 [96]
  dataset.num_classes         classes incl. background, >= 2 [4]
  dataset.n_source            labelled source images [200]
  dataset.n_target            target images [200]
  dataset.shift               domain gap strength in [0,1] [0.6]
  dataset.seed                generator seed [global_seed]
  dataset.adapt_fraction      target share used for adaptation, in (0,1) [0.85]
  train.proxy.*               search-time adaptation [iterations 300]
  train.pretrain.*            source-only seed training [iterations 2000]
  train.retrain.*             final adaptation of the best genome [iterations 3000]
    iterations                SGD steps (0 allowed)
    lr_gen                    generator learning rate, poly decay [0.01]
    lr_disc                   discriminator learning rate [0.001]
    poly_power                poly decay power [0.9]
    momentum                  SGD momentum in [0,1) [0.9]
    weight_decay              L2 weight decay [0.0005]
    lambda_adv                adversarial weight [0.001]
    lambda_aux                auxiliary adversarial weight [0.0001]
    aux_seg_weight            auxiliary segmentation loss weight [0.1]
    adversarial_input         softmax | entropy_weighted [softmax]
    crop_ratio                training crop side / image side; 0 uses the genome's crop
                              [pretrain 0.75, proxy and retrain 0]
  evolution.n_sample          random genomes at initialization [30]
  evolution.keep              survivors of initialization [8]
  evolution.capacity          population bound, oldest removed first [8]
  evolution.fraction          tournament share of the population [0.25]
  evolution.patience          cycles without improvement before stopping [25]
  evolution.max_cycles        cycle budget [100]
  evolution.selection         parent key: joint | reent [joint]
  evolution.remap_from        child weights from: parent | seed [parent]
  metrics.lambda              MACs weight in the joint score [0.01]
  metrics.min_region          smallest appearance region in pixels [16]
  metrics.bins                quantization bins per colour channel [4]
  metrics.blur_radius         box blur radius before quantization [1]
  metrics.mmd_cap             images per domain for MMD [128]
  paths.dataset               dataset directory [<out>/dataset]
  paths.seed                  pretrain directory [<out>/pretrain]
  paths.search                search directory [<out>/search]
  probe.genomes               list of genome objects to probe [seed + single-change variants]
  correlate.min_candidates    fewest trained candidates accepted [30]
  retrain_options.seed_baseline  also retrain the seed genome [true]

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.)";

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"autoadapt: evolutionary architecture search for domain-adaptive segmentation"};
  app.footer(kConfigHelp);
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override global_seed");
    sub->add_option("--out", out, "override output directory");
    sub->footer(kConfigHelp);
  };
  const std::vector<std::pair<const char *, const char *>> commands{
      {"dataset", "generate the synthetic source/target dataset"},
      {"pretrain", "train the seed network on source labels"},
      {"search", "evolutionary search with the label-free score"},
      {"retrain", "adapt the best genome (and the seed) at full budget; report target mIoU"},
      {"correlate", "rank-correlate label-free scores with target mIoU over the search history"},
      {"probe", "score a list of genomes against the seed"}};
  for (const auto &[name, desc] : commands)
    add_common(app.add_subcommand(name, desc));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    RunConfig c = load_run_config(config_path);
    if (seed)
      c.set_seed(*seed);
    if (out)
      c.out = *out;
    c.validate();

    if (cmd == "dataset") {
      const auto m = cmd_dataset(c);
      std::cout << "dataset written to " << c.dataset_path().string() << " (" << m.at("split").at("adapt")
                << " adapt / " << m.at("split").at("eval") << " eval target images)\n";
    } else if (cmd == "pretrain") {
      const auto o = cmd_pretrain(c);
      std::cout << "seed pretrained for " << o.model.log.size() << " steps, source mIoU " << o.source_miou << "\n";
    } else if (cmd == "search") {
      const auto o = cmd_search(c);
      std::cout << "evaluated " << o.result.history.size() << " candidates over " << o.result.cycles_run
                << " cycles; best joint " << o.result.best.report.joint << " (seed " << o.seed_reference.joint
                << "), genome " << hex64(genome_hash(o.result.best.genome)) << "\n";
    } else if (cmd == "retrain") {
      const auto o = cmd_retrain(c);
      std::cout << "best genome target mIoU " << o.best.miou;
      if (o.seed)
        std::cout << ", seed genome " << o.seed->miou;
      std::cout << "\n";
    } else if (cmd == "correlate") {
      const auto r = cmd_correlate(c);
      std::cout << "n=" << r.n << " spearman vs mIoU: mmd " << r.rho_mmd << ", mean_ent " << r.rho_mean_ent
                << ", reent " << r.rho_reent << ", joint " << r.rho_joint << "\n";
    } else if (cmd == "probe") {
      const auto rows = cmd_probe(c);
      std::cout << probe_csv(rows);
    }
    return 0;
  } catch (const ConfigError &e) {
    std::cerr << "autoadapt " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const UsageError &e) {
    std::cerr << "autoadapt " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "autoadapt " << cmd << ": " << e.what() << "\n";
    return 1;
  }
}

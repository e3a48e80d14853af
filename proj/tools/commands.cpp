#include "commands.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "agpi/data.hpp"
#include "agpi/error.hpp"
#include "agpi/evaluation.hpp"
#include "agpi/trainer.hpp"

namespace agpi::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// "train" or "test"; test merges the query and gallery splits.
data::Dataset load_paired(const fs::path& root, const std::string& which) {
  if (which == "train") return data::load_dataset(root, data::Split::kTrain);
  if (which == "test") {
    return data::merge_by_identity(data::load_dataset(root, data::Split::kQuery),
                                   data::load_dataset(root, data::Split::kGallery));
  }
  throw ArgumentError("split must be train or test");
}

void write_json(const fs::path& path, const ordered_json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Reports default to <run>/reports/ next to the checkpoint's run directory.
fs::path default_report(const fs::path& checkpoint, const std::string& name) {
  const fs::path dir = checkpoint.parent_path();
  const fs::path run = dir.filename() == "checkpoints" ? dir.parent_path() : dir;
  return run / "reports" / (name + "_" + checkpoint.stem().string() + ".json");
}

bool dir_has_entries(const fs::path& p) {
  return fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

Tensor pixel_rows(const std::vector<const data::Image*>& images, int h, int w) {
  std::vector<data::Image> resized;
  for (const auto* im : images) resized.push_back(data::resize(*im, h, w));
  Tensor out({static_cast<int>(images.size()), h * w * 3});
  for (std::size_t i = 0; i < resized.size(); ++i) {
    std::copy(resized[i].pixels.begin(), resized[i].pixels.end(), out.data() + i * static_cast<std::size_t>(h * w * 3));
  }
  return out;
}

data::Image triptych(const data::Image& a, const data::Image& b, const data::Image& c) {
  data::Image out(a.height, a.width * 3, 3);
  const data::Image* parts[] = {&a, &b, &c};
  for (int k = 0; k < 3; ++k) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        for (int ch = 0; ch < 3; ++ch) out.at(y, k * a.width + x, ch) = parts[k]->at(y, x, ch);
      }
    }
  }
  return out;
}

struct ToydataArgs {
  std::string out;
  data::ToySpec spec;
  bool force = false;
};

int cmd_toydata(const ToydataArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path root = a.out;
  if (dir_has_entries(root)) {
    if (!a.force) {
      err << "error: " << root.string() << " exists and is not empty; pass --force to overwrite\n";
      return kUsage;
    }
    for (const char* split : {"train", "query", "gallery"}) fs::remove_all(root / split);
  }
  const data::ToySplits splits = data::synthesize_toy_splits(a.spec);
  data::write_dataset(root, splits.train);
  data::write_dataset(root, splits.query);
  data::write_dataset(root, splits.gallery);
  for (const char* split : {"train", "query", "gallery"}) out << (root / split).string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const TrainConfig config = load_config(a.config);
  const data::Dataset train = data::load_dataset(a.data, data::Split::kTrain);
  data::validate(train, config.p);
  TrainOptions options;
  options.resume = a.resume;
  const fs::path final = agpi::train(config, train, a.out, options);
  out << (fs::path(a.out) / "config.txt").string() << "\n";
  out << (fs::path(a.out) / "metrics.jsonl").string() << "\n";
  out << final.string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, shot = "single", features = "embedding", out;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto state = load_checkpoint(a.checkpoint);
  const data::Dataset query = data::load_dataset(a.data, data::Split::kQuery);
  const data::Dataset gallery = data::load_dataset(a.data, data::Split::kGallery);
  data::validate(query, 0);
  data::validate(gallery, 0);
  const auto protocol = eval::build_protocol(query, gallery, eval::parse_shot(a.shot), a.seed);
  eval::RetrievalResult r;
  if (a.features == "embedding") {
    r = eval::evaluate_retrieval(state->embedder(), query, gallery, protocol);
  } else if (a.features == "pixels") {
    const auto& cfg = state->embedder().config();
    std::vector<const data::Image*> q, g;
    for (auto i : protocol.query) q.push_back(&query.samples[i].image);
    for (auto i : protocol.gallery) g.push_back(&gallery.samples[i].image);
    const auto dm = eval::pairwise_distances(pixel_rows(q, cfg.image_h, cfg.image_w),
                                             pixel_rows(g, cfg.image_h, cfg.image_w));
    const eval::Cameras cams{protocol.query_cameras, protocol.gallery_cameras};
    r.cmc = eval::cmc(dm, protocol.query_labels, protocol.gallery_labels, 20, cams);
    r.map = eval::mean_average_precision(dm, protocol.query_labels, protocol.gallery_labels, cams);
    r.num_queries = dm.rows;
    r.gallery_size = dm.cols;
  } else {
    throw ArgumentError("features must be embedding or pixels");
  }
  ordered_json j;
  j["r1"] = r.cmc[0];
  j["r5"] = r.cmc[4];
  j["r10"] = r.cmc[9];
  j["r20"] = r.cmc[19];
  j["map"] = r.map;
  j["protocol"] = a.shot;
  j["seed"] = a.seed;
  j["features"] = a.features;
  j["queries"] = r.num_queries;
  j["gallery"] = r.gallery_size;
  j["checkpoint"] = fs::absolute(a.checkpoint).string();
  j["config_hash"] = state->config().hash();
  const fs::path path = a.out.empty() ? default_report(a.checkpoint, "eval_" + a.shot) : fs::path(a.out);
  write_json(path, j);
  out << path.string() << "\n";
  return kOk;
}

struct MmdArgs {
  std::string checkpoint, data, split = "test", bandwidth = "median", features = "embedding", out;
  std::uint64_t seed = 0;
};

int cmd_mmd(const MmdArgs& a, std::ostream& out) {
  const auto state = load_checkpoint(a.checkpoint);
  const data::Dataset ds = load_paired(a.data, a.split);
  eval::BridgingOptions opt;
  opt.seed = a.seed;
  if (a.bandwidth != "median") {
    double sigma = 0;
    try {
      sigma = std::stod(a.bandwidth);
    } catch (const std::exception&) {
      throw ArgumentError("bandwidth must be 'median' or a positive number");
    }
    opt.bandwidth = eval::Bandwidth::fixed(sigma);
  }
  if (a.features == "pixels") {
    opt.space = eval::FeatureSpace::kPixels;
  } else if (a.features != "embedding") {
    throw ArgumentError("features must be embedding or pixels");
  }
  const auto r = eval::bridging_report(state->embedder(), state->generator(), ds, opt);
  ordered_json j;
  j["mmd_vi"] = r.mmd_vi;
  j["mmd_vz"] = r.mmd_vz;
  j["mmd_iz"] = r.mmd_iz;
  j["bridges_v"] = r.bridges_v;
  j["bridges_i"] = r.bridges_i;
  j["center_mmd_vi"] = r.center_mmd_vi;
  j["center_mmd_vz"] = r.center_mmd_vz;
  j["center_mmd_iz"] = r.center_mmd_iz;
  j["kernel"] = "gaussian";
  j["bandwidth"] = a.bandwidth;
  j["sigma"] = r.sigma;
  j["center_sigma"] = r.center_sigma;
  j["features"] = r.features;
  j["samples_per_family"] = r.samples_per_family;
  j["split"] = a.split;
  j["seed"] = a.seed;
  j["checkpoint"] = fs::absolute(a.checkpoint).string();
  j["config_hash"] = state->config().hash();
  const fs::path path = a.out.empty() ? default_report(a.checkpoint, "mmd_" + a.split) : fs::path(a.out);
  write_json(path, j);
  out << path.string() << "\n";
  return kOk;
}

struct GenArgs {
  std::string checkpoint, data, split = "test", out;
  int count = 4;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const auto state = load_checkpoint(a.checkpoint);
  data::Dataset ds = load_paired(a.data, a.split);
  if (a.count < 1) throw ArgumentError("count must be >= 1");
  // Keep the first `count` visible images, and every infrared image as a
  // potential style source.
  data::Dataset picked = ds;
  picked.samples.clear();
  int kept = 0;
  for (const auto& s : ds.samples) {
    if (s.modality == data::Modality::kVisible) {
      if (kept == a.count) continue;
      ++kept;
    }
    picked.samples.push_back(s);
  }
  std::vector<std::size_t> vis, sty;
  const Tensor z = eval::generate_for_visible(state->generator(), picked, a.seed, &vis, &sty);
  const auto& cfg = state->generator().config();
  fs::create_directories(a.out);
  for (std::size_t k = 0; k < vis.size(); ++k) {
    const auto& v = picked.samples[vis[k]];
    const data::Image vi = data::resize(v.image, cfg.image_h, cfg.image_w);
    const data::Image ii = data::resize(picked.samples[sty[k]].image, cfg.image_h, cfg.image_w);
    const data::Image zi = data::from_tensor(z, static_cast<int>(k));
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03zu.png", picked.identity_names[static_cast<std::size_t>(v.identity)].c_str(), k);
    const fs::path path = fs::path(a.out) / name;
    data::write_png(path, triptych(vi, zi, ii));
    out << path.string() << "\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Intermediate-domain cross-modal re-identification toolkit"};
  app.require_subcommand(1);

  ToydataArgs toy;
  auto* toydata = app.add_subcommand("toydata", "Synthesize the paired-modality toy dataset");
  toydata->add_option("--out", toy.out, "Output root")->required();
  toydata->add_option("--train-ids", toy.spec.train_ids, "Training identities");
  toydata->add_option("--test-ids", toy.spec.test_ids, "Held-out identities");
  toydata->add_option("--per-id", toy.spec.per_id, "Images per identity and modality");
  toydata->add_option("--height", toy.spec.height, "Image height");
  toydata->add_option("--width", toy.spec.width, "Image width");
  toydata->add_option("--seed", toy.spec.seed, "Generator seed");
  toydata->add_flag("--force", toy.force, "Overwrite an existing dataset");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train F, G and D jointly");
  train->add_option("--config", tr.config, "key=value config file")->required();
  train->add_option("--data", tr.data, "Dataset root")->required();
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_flag("--resume", tr.resume, "Continue from the latest checkpoint in --out");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "Cross-modal retrieval metrics (infrared query, visible gallery)");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--data", ev.data, "Dataset root")->required();
  evaluate->add_option("--shot", ev.shot, "single or multi");
  evaluate->add_option("--seed", ev.seed, "Gallery sampling seed");
  evaluate->add_option("--features", ev.features, "embedding or pixels");
  evaluate->add_option("--out", ev.out, "Report path");

  MmdArgs mm;
  auto* mmd = app.add_subcommand("mmd", "MMD bridging report between V, I and generated Z");
  mmd->add_option("--checkpoint", mm.checkpoint, "Checkpoint file")->required();
  mmd->add_option("--data", mm.data, "Dataset root")->required();
  mmd->add_option("--split", mm.split, "train or test");
  mmd->add_option("--bandwidth", mm.bandwidth, "median or a fixed sigma");
  mmd->add_option("--features", mm.features, "embedding or pixels");
  mmd->add_option("--seed", mm.seed, "Style pairing seed");
  mmd->add_option("--out", mm.out, "Report path");

  GenArgs gn;
  auto* gen = app.add_subcommand("gen", "Write (visible, intermediate, infrared) triptychs");
  gen->add_option("--checkpoint", gn.checkpoint, "Checkpoint file")->required();
  gen->add_option("--data", gn.data, "Dataset root")->required();
  gen->add_option("--split", gn.split, "train or test");
  gen->add_option("--count", gn.count, "Number of visible images");
  gen->add_option("--seed", gn.seed, "Style pairing seed");
  gen->add_option("--out", gn.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*toydata) return cmd_toydata(toy, out, err);
    if (*train) return cmd_train(tr, out);
    if (*evaluate) return cmd_eval(ev, out);
    if (*mmd) return cmd_mmd(mm, out);
    if (*gen) return cmd_gen(gn, out);
  } catch (const NumericalError& e) {
    err << "numerical abort in " << e.component() << ": " << e.what() << "\n";
    return kNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kData;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << "\n";
    return kData;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace agpi::cli

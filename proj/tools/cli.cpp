#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json_config.hpp"
#include "mct/io.hpp"
#include "mct/metrics.hpp"
#include "mct/microlocal.hpp"
#include "mct/network.hpp"
#include "mct/parallel.hpp"
#include "mct/phantom.hpp"
#include "mct/radon.hpp"
#include "mct/recon.hpp"
#include "mct/softprop.hpp"
#include "mct/train.hpp"
#include "mct/wfprop.hpp"

namespace mct::cli {

namespace {

namespace fs = std::filesystem;
constexpr double kDeg = std::numbers::pi / 180.0;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool reference = false;
};

// Image side length for a sinogram: explicit, or recovered from the default detector count.
Geometry geometry_of(const Sinogram& g, int n) {
  if (n <= 0) {
    for (int c = 2; c <= 8192 && n <= 0; ++c)
      if (static_cast<int>(std::ceil(kDetectorHalfWidth * c)) == g.m1()) n = c;
    if (n <= 0) throw UsageError("cannot infer the image size from the sinogram; pass --n");
  }
  return Geometry::from_sinogram(g, n, n);
}

struct RestrictOptions {
  std::optional<double> wedge;
  double center = 90.0;
  std::optional<int> sparse;

  std::optional<Restriction> get() const {
    if (wedge && sparse) throw UsageError("--wedge and --sparse are mutually exclusive");
    if (wedge) return LimitedAngle{center * kDeg, *wedge * kDeg};
    if (sparse) return SparseView{*sparse};
    return std::nullopt;
  }

  void add_to(CLI::App* app) {
    app->add_option("--wedge", wedge, "Missing wedge width in degrees");
    app->add_option("--center", center, "Missing wedge centre in degrees")->capture_default_str();
    app->add_option("--sparse", sparse, "Keep this many evenly spaced angles");
  }
};

void save_image(const fs::path& path, const GridImage& f, const std::string& pgm) {
  io::write_image(path, f);
  if (!pgm.empty()) io::write_pgm(pgm, f);
}

void save_sinogram(const fs::path& path, const Sinogram& g, const std::string& pgm) {
  io::write_sinogram(path, g);
  if (!pgm.empty()) {
    GridImage view(g.m1(), g.m2());
    for (int l = 0; l < g.m2(); ++l)
      for (int k = 0; k < g.m1(); ++k) view(k, l) = g(k, l);
    io::write_pgm(pgm, view);
  }
}

void save_dwf(const fs::path& path, const DigitalWavefrontSet& dwf, const std::string& overlay,
              const std::string& background) {
  io::write_dwf(path, dwf);
  if (overlay.empty()) return;
  std::optional<GridImage> bg;
  if (!background.empty()) bg = io::read_image(background);
  io::write_dwf_overlay(overlay, dwf, bg ? &*bg : nullptr);
}

CLI::Option* add_in(CLI::App* app, std::string& v, const std::string& what) {
  return app->add_option("--in", v, what)->required()->check(CLI::ExistingFile);
}
CLI::Option* add_out(CLI::App* app, std::string& v, const std::string& what) {
  return app->add_option("--out", v, what)->required();
}

struct Cli {
  CLI::App app{"Microlocal tomography toolkit: projection, reconstruction and wavefront-set propagation"};
  Globals globals;
  std::map<const CLI::App*, std::function<void()>> handlers;
  std::ostream& out;
  std::ostream& err;

  Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {
    app.fallthrough();
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file with option values (nested objects address subcommands)");
    app.add_option("--seed", globals.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", globals.threads, "Kernel threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--reference", globals.reference, "Single-threaded, bitwise reproducible reference path");
    add_phantom();
    add_radon();
    add_restrict();
    add_noise();
    add_recon();
    add_wf();
    add_train();
    add_eval();
  }

  void on(CLI::App* sub, std::function<void()> f) { handlers[sub] = std::move(f); }

  void add_phantom() {
    auto* ph = app.add_subcommand("phantom", "Synthetic cartoon phantoms");
    ph->require_subcommand(1);
    auto* gen = ph->add_subcommand("gen", "Generate phantoms with their images and analytic DWFs");
    struct Opts {
      int count = 1, n = 64, bins = 16, supersampling = 4;
      std::string out;
      bool pgm = false;
    };
    auto o = std::make_shared<Opts>();
    gen->add_option("--count", o->count, "Number of phantoms")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--n", o->n, "Image side length")->check(CLI::Range(16, 8192))->capture_default_str();
    gen->add_option("--bins", o->bins, "Orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--supersampling", o->supersampling, "Rasterization supersampling")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--out", o->out, "Output directory")->required();
    gen->add_flag("--pgm", o->pgm, "Also export image PGMs and DWF overlays");
    on(gen, [this, o] {
      dataset_generate(o->count, globals.seed, o->n, o->n, o->bins, o->out, PhantomConfig{}, o->supersampling);
      if (o->pgm) {
        for (int i = 0; i < o->count; ++i) {
          const auto p = dataset_item_paths(o->out, i);
          const GridImage f = io::read_image(p.image);
          io::write_pgm(fs::path(p.image).replace_extension(".pgm"), f);
          io::write_dwf_overlay(fs::path(p.dwf).replace_extension(""), io::read_dwf(p.dwf), &f);
        }
      }
      out << "wrote " << o->count << " phantoms to " << o->out << "\n";
    });
  }

  void add_radon() {
    auto* sub = app.add_subcommand("radon", "Parallel-beam projection of an image");
    struct Opts {
      std::string in, out, pgm;
      int angles = 180, detectors = 0;
    };
    auto o = std::make_shared<Opts>();
    add_in(sub, o->in, "Image container");
    add_out(sub, o->out, "Sinogram container");
    sub->add_option("--angles", o->angles, "Number of angles over [0, pi)")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--detectors", o->detectors, "Detector count (0: cover the unit square's diagonal)");
    sub->add_option("--pgm", o->pgm, "Also write a PGM view");
    on(sub, [o] {
      const GridImage f = io::read_image(o->in);
      if (f.n1() != f.n2()) throw UsageError("radon expects a square image");
      save_sinogram(o->out, radon(f, Geometry::uniform(f.n1(), o->angles, o->detectors)), o->pgm);
    });
  }

  void add_restrict() {
    auto* sub = app.add_subcommand("restrict", "Limited-angle or sparse-view restriction of a sinogram");
    struct Opts {
      std::string in, out, pgm;
      RestrictOptions r;
    };
    auto o = std::make_shared<Opts>();
    add_in(sub, o->in, "Sinogram container");
    add_out(sub, o->out, "Restricted sinogram");
    o->r.add_to(sub);
    sub->add_option("--pgm", o->pgm, "Also write a PGM view");
    on(sub, [o] {
      const auto r = o->r.get();
      if (!r) throw UsageError("restrict needs --wedge or --sparse");
      save_sinogram(o->out, restrict_angles(io::read_sinogram(o->in), *r), o->pgm);
    });
  }

  void add_noise() {
    auto* sub = app.add_subcommand("noise", "Add relative Gaussian noise to a sinogram");
    struct Opts {
      std::string in, out, pgm;
      double sigma = 0.05;
    };
    auto o = std::make_shared<Opts>();
    add_in(sub, o->in, "Sinogram container");
    add_out(sub, o->out, "Noisy sinogram");
    sub->add_option("--sigma", o->sigma, "Noise level relative to the RMS of the data")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_option("--pgm", o->pgm, "Also write a PGM view");
    on(sub, [this, o] { save_sinogram(o->out, mct::add_noise(io::read_sinogram(o->in), o->sigma, globals.seed), o->pgm); });
  }

  void add_recon() {
    auto* rc = app.add_subcommand("recon", "Reconstruct an image from a sinogram");
    rc->require_subcommand(1);
    struct Common {
      std::string in, out, pgm;
      int n = 0;
    };
    auto common = [](CLI::App* sub, Common& c) {
      add_in(sub, c.in, "Sinogram container");
      add_out(sub, c.out, "Image container");
      sub->add_option("--n", c.n, "Image side length (0: infer from the detector count)");
      sub->add_option("--pgm", c.pgm, "Also write a PGM view");
    };
    auto report = [this](const SolverReport& r) {
      out << "iterations=" << r.iterations << " converged=" << (r.converged ? 1 : 0) << " residual=" << r.residual;
      if (!r.energy.empty()) out << " energy=" << r.energy.back();
      out << "\n";
      if (!r.warning.empty()) err << "warning: " << r.warning << "\n";
    };

    {
      auto* sub = rc->add_subcommand("fbp", "Filtered back-projection");
      struct Opts : Common {
        RampWindow window = RampWindow::none;
      };
      auto o = std::make_shared<Opts>();
      common(sub, *o);
      const std::map<std::string, RampWindow> windows{{"none", RampWindow::none}, {"hann", RampWindow::hann}};
      sub->add_option("--window", o->window, "Ramp filter window")
          ->transform(CLI::CheckedTransformer(windows, CLI::ignore_case))
          ->option_text("none|hann");
      on(sub, [o] {
        const Sinogram g = io::read_sinogram(o->in);
        save_image(o->out, recon_fbp(g, geometry_of(g, o->n), o->window), o->pgm);
      });
    }
    {
      auto* sub = rc->add_subcommand("tikhonov", "Tikhonov regularisation by conjugate gradients");
      struct Opts : Common {
        double lambda = 1e-2, tol = 1e-8;
        int iterations = 200;
      };
      auto o = std::make_shared<Opts>();
      common(sub, *o);
      sub->add_option("--lambda", o->lambda, "Regularisation weight")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--iterations", o->iterations, "Iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--tol", o->tol, "Relative residual tolerance")->check(CLI::PositiveNumber)->capture_default_str();
      on(sub, [o, report] {
        const Sinogram g = io::read_sinogram(o->in);
        SolverReport r;
        save_image(o->out, recon_tikhonov(g, geometry_of(g, o->n), o->lambda, o->iterations, &r, o->tol), o->pgm);
        report(r);
      });
    }
    {
      auto* sub = rc->add_subcommand("tv", "Total-variation regularisation by primal-dual hybrid gradient");
      struct Opts : Common {
        double lambda = 1e-4;
        int iterations = 500;
      };
      auto o = std::make_shared<Opts>();
      common(sub, *o);
      sub->add_option("--lambda", o->lambda, "Regularisation weight")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--iterations", o->iterations, "Iterations")->check(CLI::PositiveNumber)->capture_default_str();
      on(sub, [o, report] {
        const Sinogram g = io::read_sinogram(o->in);
        SolverReport r;
        save_image(o->out, recon_tv(g, geometry_of(g, o->n), o->lambda, o->iterations, &r), o->pgm);
        report(r);
      });
    }
    {
      auto* sub = rc->add_subcommand("lpd", "Learned primal-dual reconstruction");
      struct Opts : Common {
        std::string weights;
      };
      auto o = std::make_shared<Opts>();
      common(sub, *o);
      sub->add_option("--weights", o->weights, "Weight checkpoint")->required()->check(CLI::ExistingFile);
      on(sub, [o] {
        const Sinogram g = io::read_sinogram(o->in);
        const LpdParams p = read_weights(o->weights);
        save_image(o->out, lpd_forward(p, g, geometry_of(g, o->n)).output, o->pgm);
      });
    }
  }

  void add_wf() {
    auto* wf = app.add_subcommand("wf", "Digital wavefront sets");
    wf->require_subcommand(1);
    struct Out {
      std::string out, overlay, background;
    };
    auto outputs = [](CLI::App* sub, Out& o) {
      add_out(sub, o.out, "DWF container");
      sub->add_option("--overlay", o.overlay, "Write an orientation overlay as <stem>_{r,g,b}.pgm");
      sub->add_option("--background", o.background, "Image container shown under the overlay")
          ->check(CLI::ExistingFile);
    };
    auto stats = [this](const PushStats& s) {
      out << "mapped=" << s.mapped << " outside=" << s.outside << " masked=" << s.masked << " grazing=" << s.grazing
          << "\n";
    };

    {
      auto* sub = wf->add_subcommand("analytic", "Analytic DWF of a phantom");
      struct Opts : Out {
        std::string phantom;
        int n = 64, bins = 16;
      };
      auto o = std::make_shared<Opts>();
      sub->add_option("--phantom", o->phantom, "Phantom JSON")->required()->check(CLI::ExistingFile);
      sub->add_option("--n", o->n, "Image side length")->check(CLI::Range(2, 8192))->capture_default_str();
      sub->add_option("--bins", o->bins, "Orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
      outputs(sub, *o);
      on(sub, [o] {
        const auto ph = phantom_from_json(nlohmann::json::parse(io::read_text(o->phantom)));
        save_dwf(o->out, analytic_dwf(ph, o->n, o->n, o->bins), o->overlay, o->background);
      });
    }
    {
      auto* sub = wf->add_subcommand("estimate", "Gradient-based DWF estimate of an image");
      struct Opts : Out {
        std::string in;
        int bins = 16;
        double rel = 0.1;
      };
      auto o = std::make_shared<Opts>();
      add_in(sub, o->in, "Image container");
      sub->add_option("--bins", o->bins, "Orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--rel", o->rel, "Gradient threshold relative to the maximum")
          ->check(CLI::Range(0.0, 1.0))
          ->capture_default_str();
      outputs(sub, *o);
      on(sub, [o] {
        save_dwf(o->out, dwf_estimate(io::read_image(o->in), o->bins, EstimateThresholds{o->rel}), o->overlay,
                 o->background);
      });
    }
    {
      auto* sub = wf->add_subcommand("map-fwd", "Push an image DWF to the sinogram domain");
      struct Opts : Out {
        std::string in, geometry;
        int sino_bins = 64;
      };
      auto o = std::make_shared<Opts>();
      add_in(sub, o->in, "Image DWF container");
      sub->add_option("--geometry", o->geometry, "Sinogram whose angles, mask and detectors define the geometry")
          ->required()
          ->check(CLI::ExistingFile);
      sub->add_option("--sino-bins", o->sino_bins, "Sinogram covector bins")->check(CLI::PositiveNumber)->capture_default_str();
      outputs(sub, *o);
      on(sub, [o, stats] {
        const DigitalWavefrontSet d = io::read_dwf(o->in);
        if (d.n1() != d.n2()) throw UsageError("map-fwd expects a square image DWF");
        PushStats s;
        save_dwf(o->out, dwf_image_to_sino(d, geometry_of(io::read_sinogram(o->geometry), d.n1()), o->sino_bins, &s),
                 o->overlay, o->background);
        stats(s);
      });
    }
    {
      auto* sub = wf->add_subcommand("map-bwd", "Pull a sinogram DWF back to the image domain");
      struct Opts : Out {
        std::string in, geometry;
        int n = 0, bins = 16;
      };
      auto o = std::make_shared<Opts>();
      add_in(sub, o->in, "Sinogram DWF container");
      sub->add_option("--geometry", o->geometry, "Sinogram defining the geometry")->required()->check(CLI::ExistingFile);
      sub->add_option("--n", o->n, "Image side length (0: infer from the detector count)");
      sub->add_option("--bins", o->bins, "Image orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
      outputs(sub, *o);
      on(sub, [o, stats] {
        PushStats s;
        const Geometry geo = geometry_of(io::read_sinogram(o->geometry), o->n);
        save_dwf(o->out, dwf_sino_to_image(io::read_dwf(o->in), geo, o->bins, &s), o->overlay, o->background);
        stats(s);
      });
    }
    {
      auto* sub = wf->add_subcommand("visible", "List the image orientation bins visible under a geometry");
      struct Opts {
        std::string geometry;
        int bins = 16;
      };
      auto o = std::make_shared<Opts>();
      sub->add_option("--geometry", o->geometry, "Sinogram defining the geometry")->required()->check(CLI::ExistingFile);
      sub->add_option("--bins", o->bins, "Orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
      on(sub, [this, o] {
        const auto v = visible_orientations(geometry_of(io::read_sinogram(o->geometry), 0), o->bins);
        out << "bin,angle_deg,visible\n";
        for (int k = 0; k < o->bins; ++k) out << k << ',' << 180.0 * k / o->bins << ',' << (v[k] ? 1 : 0) << '\n';
      });
    }
    {
      auto* sub = wf->add_subcommand("prop-lpd", "Propagate a data DWF through a learned primal-dual pass");
      struct Opts : Out {
        std::string in, weights, dwf, dwf_g, trace;
        int n = 0, bins = 16, sino_bins = 64;
        bool soft = false;
        SoftOptions soft_opts;
      };
      auto o = std::make_shared<Opts>();
      add_in(sub, o->in, "Sinogram container fed to the network");
      sub->add_option("--weights", o->weights, "Weight checkpoint")->required()->check(CLI::ExistingFile);
      auto* a = sub->add_option("--dwf", o->dwf, "Image DWF, pushed to the sinogram domain first")->check(CLI::ExistingFile);
      auto* b = sub->add_option("--dwf-g", o->dwf_g, "Sinogram DWF")->check(CLI::ExistingFile);
      a->excludes(b);
      sub->add_option("--n", o->n, "Image side length (0: infer from the detector count)");
      sub->add_option("--bins", o->bins, "Image orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--sino-bins", o->sino_bins, "Sinogram covector bins")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_flag("--soft", o->soft, "Use the differentiable soft engine");
      sub->add_option("--tau", o->soft_opts.tau, "Soft value temperature")->check(CLI::PositiveNumber)->capture_default_str();
      sub->add_option("--tau-grad", o->soft_opts.tau_grad, "Soft gradient temperature")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
      sub->add_option("--trace", o->trace, "Write the hard-mode layer trace as JSON");
      outputs(sub, *o);
      on(sub, [o] {
        if (o->dwf.empty() == o->dwf_g.empty()) throw UsageError("prop-lpd needs exactly one of --dwf and --dwf-g");
        const Sinogram g = io::read_sinogram(o->in);
        const Geometry geo = geometry_of(g, o->n);
        const DigitalWavefrontSet dg =
            o->dwf_g.empty() ? dwf_image_to_sino(io::read_dwf(o->dwf), geo, o->sino_bins) : io::read_dwf(o->dwf_g);
        const LpdParams p = read_weights(o->weights);
        const LpdCapture cap = lpd_forward(p, g, geo);
        DigitalWavefrontSet result;
        if (o->soft) {
          const SoftLpdConfig cfg{o->bins, dg.bins(), o->soft_opts};
          result = soft_prop_lpd(dg, cap, geo, cfg, SoftLpdMaps(geo, cfg));
        } else {
          LpdPropConfig cfg;
          cfg.bins = o->bins;
          cfg.sino_bins = dg.bins();
          PropagationTrace trace;
          result = prop_lpd(dg, p, cap, geo, cfg, &trace);
          if (!o->trace.empty()) io::write_text(o->trace, trace.to_json().dump(2));
        }
        save_dwf(o->out, result, o->overlay, o->background);
      });
    }
  }

  void add_train() {
    auto* sub = app.add_subcommand("train", "Train a learned primal-dual network on a generated dataset");
    struct Opts {
      std::string data, out, log, init;
      int angles = 60, detectors = 0, limit = -1, n = 0;
      RestrictOptions restriction;
      LpdConfig lpd;
      TrainConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--data", o->data, "Directory written by 'phantom gen'")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", o->out, "Output weight checkpoint")->required();
    sub->add_option("--log", o->log, "CSV training log");
    sub->add_option("--init", o->init, "Initial weights (default: random from --seed)")->check(CLI::ExistingFile);
    sub->add_option("--limit", o->limit, "Use at most this many items");
    sub->add_option("--angles", o->angles, "Number of angles over [0, pi)")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--detectors", o->detectors, "Detector count (0: default)");
    o->restriction.add_to(sub);
    sub->add_option("--iterations", o->lpd.iterations, "Unrolled iterations")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--state", o->lpd.state, "State channels")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--hidden", o->lpd.hidden, "Hidden channels")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_flag("--bias", o->lpd.bias, "Give convolutions a bias");
    auto& c = o->cfg;
    sub->add_option("--steps", c.steps, "Optimisation steps")->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--lr", c.learning_rate, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--batch", c.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--lambda", c.lambda, "Weight of the reconstruction loss in (0, 1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    const std::map<std::string, Optimizer> opts{{"adam", Optimizer::adam}, {"sgd", Optimizer::sgd}};
    sub->add_option("--optimizer", c.optimizer, "Optimiser")
        ->transform(CLI::CheckedTransformer(opts, CLI::ignore_case))
        ->option_text("adam|sgd");
    const std::map<std::string, Schedule> scheds{{"constant", Schedule::constant}, {"cosine", Schedule::cosine}};
    sub->add_option("--schedule", c.schedule, "Learning-rate schedule")
        ->transform(CLI::CheckedTransformer(scheds, CLI::ignore_case))
        ->option_text("cosine|constant");
    sub->add_option("--noise", c.noise, "Relative noise on the training sinograms")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_option("--bins", c.bins, "Image orientation bins")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--sino-bins", c.sino_bins, "Sinogram covector bins")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--tau", c.soft.tau, "Soft value temperature")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--tau-grad", c.soft.tau_grad, "Soft gradient temperature")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--bump-window", c.soft.window, "Orientation bump half-width in bins")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_option("--eps-clip", c.eps_clip, "Probability clip in the wavefront loss")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    on(sub, [this, o] {
      TrainConfig cfg = o->cfg;
      cfg.seed = globals.seed;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto first = dataset_item_paths(o->data, 0);
      if (!fs::exists(first.image)) throw std::runtime_error("no dataset items in " + o->data);
      const int n = io::read_image(first.image).n1();
      Geometry geo = Geometry::uniform(n, o->angles, o->detectors);
      if (const auto r = o->restriction.get()) geo = restrict_geometry(geo, *r);
      const auto items = load_train_set(o->data, geo, cfg, o->limit);
      LpdParams init = o->init.empty() ? LpdParams::random(o->lpd, globals.seed) : read_weights(o->init);
      std::ofstream log;
      if (!o->log.empty()) {
        log.open(o->log);
        if (!log) throw std::runtime_error("cannot open '" + o->log + "' for writing");
      }
      const TrainResult res = train(init, items, geo, cfg, o->log.empty() ? nullptr : &log);
      write_weights(o->out, res.params);
      out << "trained " << cfg.steps << " steps on " << items.size() << " items";
      if (!res.log.empty()) out << "; final loss_joint " << res.log.back().loss_joint;
      out << "\n";
    });
  }

  void add_eval() {
    auto* sub = app.add_subcommand("eval", "Compare a reconstruction with the ground truth");
    struct Opts {
      std::string rec, gt, out, dwf_pred, dwf_gt;
      double eps_clip = 1e-7;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--rec", o->rec, "Reconstruction")->required()->check(CLI::ExistingFile);
    sub->add_option("--gt", o->gt, "Ground truth")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o->out, "Append the row to this CSV file");
    auto* a = sub->add_option("--dwf-pred", o->dwf_pred, "Predicted (soft) DWF")->check(CLI::ExistingFile);
    auto* b = sub->add_option("--dwf-gt", o->dwf_gt, "Target DWF")->check(CLI::ExistingFile);
    a->needs(b);
    b->needs(a);
    on(sub, [this, o] {
      const MetricsReport m = evaluate(io::read_image(o->rec), io::read_image(o->gt));
      std::ostringstream header, row;
      header << "rec,psnr,ssim,rel_l2";
      row << std::setprecision(10) << o->rec << ',' << m.psnr << ',' << m.ssim << ',' << m.l2_relative_error;
      if (!o->dwf_pred.empty()) {
        header << ",loss_inp";
        row << ',' << loss_inp(io::read_dwf(o->dwf_gt), io::read_dwf(o->dwf_pred), o->eps_clip);
      }
      out << header.str() << '\n' << row.str() << '\n';
      if (!o->out.empty()) {
        const bool fresh = !fs::exists(o->out) || fs::file_size(o->out) == 0;
        std::ofstream f(o->out, std::ios::app);
        if (!f) throw std::runtime_error("cannot open '" + o->out + "' for writing");
        if (fresh) f << header.str() << '\n';
        f << row.str() << '\n';
      }
    });
  }

  const CLI::App* leaf() const {
    const CLI::App* a = &app;
    while (true) {
      const auto subs = a->get_subcommands();
      if (subs.empty()) return a;
      a = subs.front();
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  try {
    set_thread_count(cli.globals.reference ? 1 : cli.globals.threads);
    const auto it = cli.handlers.find(cli.leaf());
    if (it == cli.handlers.end()) throw UsageError("incomplete command");
    it->second();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << cli.leaf()->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mct::cli

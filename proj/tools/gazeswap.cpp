// gazeswap: command-line front end for the dataset toolkit.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gazeswap/annotation_server.hpp"
#include "gazeswap/annotation_store.hpp"
#include "gazeswap/dataset_io.hpp"
#include "gazeswap/eval.hpp"
#include "gazeswap/geometry.hpp"
#include "gazeswap/gradcheck.hpp"
#include "gazeswap/loss_io.hpp"
#include "gazeswap/pipeline.hpp"
#include "gazeswap/toy_descent.hpp"

namespace fs = std::filesystem;
using namespace gazeswap;

namespace {

// Exit codes beyond CLI11's own.
constexpr int kExitCheckFailed = 1;
constexpr int kExitInvalidInput = 2;
constexpr int kExitSolverFailed = 3;

struct Common {
    std::uint64_t seed = 42;
    unsigned jobs = default_jobs();
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

/// Fixed-width text table.
void print_table(std::ostream& out, const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << r[c];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

void write_csv(std::ostream& out, const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::io_error, "cannot write " + path.string());
    out << text;
}

// ------------------------------------------------------------------ match

struct MatchArgs {
    fs::path attributes, faces, out;
    MatchConfig cfg;
    NormalizationParams norm;
};

int run_match(const MatchArgs& a, const Common& common) {
    const auto records = load_records<AttributeRecord>(a.attributes);
    std::vector<AttributeRecord> queries, candidates;
    for (const auto& r : records) (r.source == FaceSource::Wider ? queries : candidates).push_back(r);
    if (candidates.empty()) fail(Errc::no_match, a.attributes.string() + ": no xgaze candidates");

    std::map<std::string, FaceEntry> faces;
    if (!a.faces.empty())
        for (auto& f : load_records<FaceEntry>(a.faces))
            if (f.source == FaceSource::Wider) faces.emplace(f.face_id, std::move(f));

    MatchBatchOptions opts{a.cfg, a.norm, common.jobs};
    const MatchBatch batch = match_batch(queries, candidates, faces, opts);
    for (const auto& f : batch.normalization_failures) std::cerr << "warning: normalisation failed for " << f << '\n';
    write_records(a.out, batch.matches);
    std::size_t eyes = 0, fallback = 0;
    for (const auto& m : batch.matches) {
        eyes += m.mode == SwapMode::Eyes;
        fallback += m.gender_fallback;
    }
    std::cout << "matched " << batch.matches.size() << " faces against " << candidates.size() << " candidates (" << eyes
              << " eyes, " << batch.matches.size() - eyes << " full, " << fallback << " gender fallbacks) -> " << a.out.string()
              << '\n';
    return 0;
}

// ------------------------------------------------------------------ swap

struct SwapArgs {
    fs::path faces, matches, out_dir;
    SwapBatchOptions opts;
};

int run_swap(SwapArgs a, const Common& common) {
    const auto faces = load_records<FaceEntry>(a.faces);
    const auto matches = load_records<MatchRecord>(a.matches);
    a.opts.jobs = common.jobs;
    const SwapBatch batch = swap_batch(a.faces, faces, matches, a.out_dir, a.opts);
    write_records(a.out_dir / "annotations.jsonl", batch.annotations);
    const DatasetStats s = dataset_stats(batch.annotations);
    std::cout << "swapped " << s.faces << " of " << s.candidates() << " faces in " << s.images << " images -> "
              << (a.out_dir / "annotations.jsonl").string() << '\n';
    for (const auto& [reason, n] : s.skipped_by_reason) std::cout << "  skipped " << reason << ": " << n << '\n';
    if (batch.solver_failures > 0) {
        std::cerr << "error: " << batch.solver_failures << " Poisson solves did not converge\n";
        return kExitSolverFailed;
    }
    return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    fs::path annotations, predictions, csv;
    std::string bins = "width";
};

int run_eval(const EvalArgs& a) {
    const auto ann = load_records<ImageAnnotation>(a.annotations);
    const auto pred = load_records<Prediction>(a.predictions);
    const EvalJoin join = join_predictions(ann, pred);
    if (!join.missing.empty()) std::cerr << "warning: " << join.missing.size() << " labelled faces have no prediction\n";

    const bool width = a.bins == "width";
    const BinnedError be = binned_error(join.records, width ? width_bins() : angle_bins(), width ? BinAxis::Width : BinAxis::Angle);
    std::vector<std::vector<std::string>> rows;
    for (const auto& b : be.bins)
        rows.push_back({b.label, std::to_string(b.count), b.mean_error ? fmt(*b.mean_error, 4) : ""});
    const std::vector<std::string> header{width ? "width_px" : "angle_deg", "count", "mean_error_deg"};
    print_table(std::cout, header, rows);
    std::cout << "records " << be.total << ", outside bins " << be.excluded << '\n';
    if (!a.csv.empty()) {
        std::ostringstream os;
        write_csv(os, header, rows);
        write_text_file(a.csv, os.str());
    }
    return 0;
}

// ------------------------------------------------------------------ gs-report

struct GsArgs {
    double radius = 100.0, pixel = 1.0;
    std::int64_t samples = 100000;
    fs::path out_dir = ".";
};

int run_gs_report(const GsArgs& a, const Common& common) {
    const FaceRadius r(a.radius);
    std::vector<std::vector<std::string>> curve;
    for (int k = -19; k <= 19; ++k) {
        const double xr = k * 0.05;
        curve.push_back({fmt(xr, 3), fmt(xr * a.radius, 6), fmt(gaze_sensitivity(xr * a.radius, r), 10)});
    }
    std::ostringstream cs;
    write_csv(cs, {"x_over_r", "x_px", "gs"}, curve);
    write_text_file(a.out_dir / "gs_curve.csv", cs.str());

    std::vector<std::vector<std::string>> table;
    for (int deg = 5; deg <= 85; deg += 10) {
        const GazeAngles g = GazeAngles::from_degrees(0.0, deg);
        std::vector<std::string> row{std::to_string(deg)};
        for (auto planes : {std::vector<Plane>{Plane::Front}, std::vector<Plane>{Plane::Top}, std::vector<Plane>{Plane::Side},
                            std::vector<Plane>{Plane::Front, Plane::Top, Plane::Side}})
            row.push_back(fmt(quantization_error_mc(g, r, a.pixel, planes, a.samples, common.seed), 6));
        table.push_back(row);
    }
    const std::vector<std::string> header{"angle_deg", "front", "top", "side", "three_plane"};
    std::ostringstream ts;
    write_csv(ts, header, table);
    write_text_file(a.out_dir / "gs_planes.csv", ts.str());
    print_table(std::cout, header, table);
    std::cout << "mean angular error (deg), r=" << a.radius << " px, pixel=" << a.pixel << ", " << a.samples << " samples, seed "
              << common.seed << "\nwrote " << (a.out_dir / "gs_curve.csv").string() << " and " << (a.out_dir / "gs_planes.csv").string()
              << '\n';
    return 0;
}

// ------------------------------------------------------------------ gradcheck

struct GradArgs {
    fs::path input;
    int count = 100;
    int anchors = 8;
    double step = 1e-5, tolerance = 1e-4;
};

int run_gradcheck(const GradArgs& a, const Common& common) {
    std::vector<LossInstance> instances;
    if (!a.input.empty()) {
        instances = load_records<LossInstance>(a.input);
    } else {
        Rng rng(common.seed);
        for (int i = 0; i < a.count; ++i) instances.push_back(random_loss_instance(rng, static_cast<std::size_t>(a.anchors)));
    }
    using Fn = LossResult (*)(const PredictionSet&, const TargetSet&, const ProjectionWeights&, const LossConfig&);
    const std::vector<std::pair<std::string, Fn>> losses{
        {"face", [](const auto& p, const auto& t, const auto&, const auto& c) { return loss_face(p, t, c); }},
        {"self", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_self(p, t, w, c.radius); }},
        {"gaze", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_gaze(p, t, w, c); }},
        {"total", [](const auto& p, const auto& t, const auto& w, const auto& c) { return loss_total(p, t, w, c); }},
    };
    std::map<std::string, GradcheckReport> reports;
    for (const auto& inst : instances)
        for (const auto& [name, fn] : losses) reports[name].merge(gradcheck(inst, fn, a.step));

    std::vector<std::string> header{"block"};
    for (const auto& [name, _] : losses) header.push_back(name);
    std::vector<std::vector<std::string>> rows;
    double worst = 0.0;
    for (const auto& block : parameter_blocks()) {
        std::vector<std::string> row{block};
        for (const auto& [name, _] : losses) {
            const double v = reports[name].max_rel_error[block];
            worst = std::max(worst, v);
            row.push_back(fmt(v, 3));
        }
        rows.push_back(row);
    }
    print_table(std::cout, header, rows);
    std::cout << instances.size() << " instances, step " << a.step << ": max relative error " << fmt(worst, 3)
              << (worst < a.tolerance ? " < " : " >= ") << a.tolerance << '\n';
    return worst < a.tolerance ? 0 : kExitCheckFailed;
}

// ------------------------------------------------------------------ toyfit

struct ToyArgs {
    int anchors = 64;
    DescentOptions descent;
    std::string schedule = "exponential";
    double radius = 1.0;
    fs::path trace;
};

int run_toyfit(ToyArgs a, const Common& common) {
    a.descent.schedule = a.schedule == "constant" ? LrSchedule::Constant
                         : a.schedule == "linear" ? LrSchedule::LinearDecay
                                                  : LrSchedule::Exponential;
    const ToyProblem problem = make_realizable_problem(static_cast<std::size_t>(a.anchors), common.seed, a.radius);
    Rng rng(common.seed + 1);
    LinearHead head = LinearHead::random(static_cast<int>(problem.features.cols()), rng);
    LossConfig cfg;
    cfg.radius = a.radius;
    const DescentTrace t = toy_descent(problem, head, cfg, a.descent);
    if (!a.trace.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < t.loss.size(); ++i)
            rows.push_back({std::to_string(i), fmt(t.loss[i], 10), fmt(t.p[i][0], 8), fmt(t.p[i][1], 8), fmt(t.p[i][2], 8)});
        std::ostringstream os;
        write_csv(os, {"step", "loss", "p_front", "p_top", "p_side"}, rows);
        write_text_file(a.trace, os.str());
    }
    if (t.diverged()) {
        std::cerr << "error: loss became non-finite at step " << t.diverged_at << '\n';
        return kExitSolverFailed;
    }
    std::cout << "initial loss " << fmt(t.loss.front(), 8) << "\nfinal loss   " << fmt(t.loss.back(), 8)
              << "\nfinal p      " << fmt(t.p.back()[0], 6) << ' ' << fmt(t.p.back()[1], 6) << ' ' << fmt(t.p.back()[2], 6)
              << "\nmax projection-consistency residual " << fmt(t.final_consistency, 6) << '\n';
    return 0;
}

// ------------------------------------------------------------------ stats

int run_stats(const fs::path& annotations, bool as_json) {
    const auto ann = load_records<ImageAnnotation>(annotations);
    const DatasetStats s = dataset_stats(ann);
    if (as_json) {
        Json j;
        j["images"] = s.images;
        j["faces"] = s.faces;
        j["skipped"] = s.skipped;
        j["candidates"] = s.candidates();
        j["skipped_by_reason"] = Json::object();
        for (const auto& [k, v] : s.skipped_by_reason) j["skipped_by_reason"][k] = v;
        j["width_histogram"] = Json::object();
        j["width_histogram"]["<30"] = s.narrower_than_bins;
        for (const auto& [k, v] : s.width_histogram) j["width_histogram"][k] = v;
        j["faces_per_image"] = {s.min_faces_per_image, s.max_faces_per_image};
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    std::cout << "images      " << s.images << "\nfaces       " << s.faces << "\nskipped     " << s.skipped << "\ncandidates  "
              << s.candidates() << "\nfaces/image " << s.min_faces_per_image << "-" << s.max_faces_per_image << '\n';
    for (const auto& [reason, n] : s.skipped_by_reason) std::cout << "  skipped " << reason << ": " << n << '\n';
    std::vector<std::vector<std::string>> rows{{"<30", std::to_string(s.narrower_than_bins)}};
    for (const auto& [label, n] : s.width_histogram) rows.push_back({label, std::to_string(n)});
    print_table(std::cout, {"width_px", "faces"}, rows);
    return 0;
}

// ------------------------------------------------------------------ annotate

struct AnnotateArgs {
    fs::path data_dir, static_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
    int crop = 224;
};

AnnotationServer* g_server = nullptr;

int run_annotate(const AnnotateArgs& a) {
    NormalizationParams np;
    np.crop_px = a.crop;
    AnnotationStore store(a.data_dir, np);
    const fs::path ui = a.static_dir.empty() ? a.data_dir / "ui" : a.static_dir;
    AnnotationServer server(store, ui);
    const int port = server.bind(a.host, a.port);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    std::cout << "serving " << a.data_dir.string() << " on http://" << a.host << ":" << port << std::endl;
    server.listen();
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaze-swapping dataset toolkit"};
    app.set_config("--config", "", "key=value configuration file (flags on the command line win)");
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
    app.add_option("--jobs", common.jobs, "Worker threads for match and swap")->capture_default_str()->check(CLI::PositiveNumber);

    MatchArgs match;
    auto* m = app.add_subcommand("match", "Retrieve a gaze-labelled source face for every in-the-wild face");
    m->add_option("--attributes", match.attributes, "Attribute records (JSON-lines, wider and xgaze)")->required()->check(CLI::ExistingFile);
    m->add_option("--faces", match.faces, "Face manifest; attaches the normalisation of each wider face")->check(CLI::ExistingFile);
    m->add_option("--out", match.out, "Output match records")->required();
    m->add_option("--alpha-lmk", match.cfg.alpha_lmk, "Landmark distance weight")->capture_default_str();
    m->add_option("--alpha-pose", match.cfg.alpha_pose, "Head-pose distance weight")->capture_default_str();
    m->add_option("--topn", match.cfg.top_n, "Candidates kept before the auxiliary penalty")->capture_default_str();
    m->add_option("--beta-age", match.cfg.beta_age, "Age penalty weight")->capture_default_str();
    m->add_option("--beta-race", match.cfg.beta_race, "Race penalty weight")->capture_default_str();
    m->add_option("--eye-threshold", match.cfg.eye_swap_threshold, "Distance below which only the eyes are swapped")->capture_default_str();
    m->add_option("--crop", match.norm.crop_px, "Normalised crop size (px)")->capture_default_str();
    m->add_option("--focal", match.norm.focal_px, "Virtual focal length (px)")->capture_default_str();
    m->add_option("--distance", match.norm.distance_mm, "Virtual camera distance (mm)")->capture_default_str();

    SwapArgs swap;
    auto* s = app.add_subcommand("swap", "Blend matched source faces into their target images");
    s->add_option("--faces", swap.faces, "Face manifest (JSON-lines)")->required()->check(CLI::ExistingFile);
    s->add_option("--matches", swap.matches, "Match records from `match`")->required()->check(CLI::ExistingFile);
    s->add_option("--out-dir", swap.out_dir, "Output directory for images and annotations.jsonl")->required();
    s->add_option("--eye-dilation", swap.opts.swap.mask.eye_dilation, "Eye mask growth, fraction of inter-ocular distance")->capture_default_str();
    s->add_option("--cg-tolerance", swap.opts.swap.blend.tolerance, "CG target relative residual")->capture_default_str();
    s->add_option("--accept-tolerance", swap.opts.swap.blend.accept_tolerance, "Largest accepted relative residual")->capture_default_str();
    s->add_option("--max-iterations", swap.opts.swap.blend.max_iterations, "CG iteration cap")->capture_default_str();
    s->add_flag("--jacobi", swap.opts.swap.blend.jacobi, "Jacobi-preconditioned CG");
    s->add_option("--min-width", swap.opts.qualification.min_width_px, "Skip faces narrower than this (px)")->capture_default_str();
    s->add_option("--max-outside", swap.opts.qualification.max_outside_fraction, "Skip faces with more landmarks outside the box")
        ->capture_default_str();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Binned mean angular error of predictions against labels");
    e->add_option("--annotations", ev.annotations, "Labelled images (JSON-lines)")->required()->check(CLI::ExistingFile);
    e->add_option("--predictions", ev.predictions, "Predicted gaze per face (JSON-lines)")->required()->check(CLI::ExistingFile);
    e->add_option("--bins", ev.bins, "Binning protocol")->check(CLI::IsMember({"width", "angle"}))->capture_default_str();
    e->add_option("--csv", ev.csv, "Also write the table as CSV");

    GsArgs gs;
    auto* g = app.add_subcommand("gs-report", "Gaze-sensitivity curve and projection-quantisation comparison");
    g->add_option("--radius", gs.radius, "Face radius r (px)")->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--pixel", gs.pixel, "Quantisation step (px)")->capture_default_str()->check(CLI::NonNegativeNumber);
    g->add_option("--samples", gs.samples, "Monte Carlo samples per cell")->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--out-dir", gs.out_dir, "Directory for gs_curve.csv and gs_planes.csv")->capture_default_str();

    GradArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Compare analytic loss gradients with central differences");
    c->add_option("--input", gc.input, "Loss instances (JSON-lines); random instances when omitted")->check(CLI::ExistingFile);
    c->add_option("--count", gc.count, "Random instances")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--anchors", gc.anchors, "Anchors per random instance")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--step", gc.step, "Finite-difference step")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--tolerance", gc.tolerance, "Largest accepted relative error")->capture_default_str();

    ToyArgs toy;
    auto* t = app.add_subcommand("toyfit", "Fit an affine head to a realizable synthetic problem");
    t->add_option("--anchors", toy.anchors, "Anchors")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--steps", toy.descent.steps, "Gradient steps")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--lr", toy.descent.lr, "Initial learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--schedule", toy.schedule, "Learning-rate schedule")
        ->check(CLI::IsMember({"constant", "linear", "exponential"}))
        ->capture_default_str();
    t->add_option("--final-lr-fraction", toy.descent.final_lr_fraction, "Exponential schedule end point")->capture_default_str();
    t->add_option("--radius", toy.radius, "Projection radius in loss space")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--trace", toy.trace, "Write the loss and weight trace as CSV");

    fs::path stats_file;
    bool stats_json = false;
    auto* st = app.add_subcommand("stats", "Counts and face-width histogram of a labelled dataset");
    st->add_option("--annotations", stats_file, "Labelled images (JSON-lines)")->required()->check(CLI::ExistingFile);
    st->add_flag("--json", stats_json, "Print JSON instead of text");

    AnnotateArgs an;
    auto* a = app.add_subcommand("annotate", "Serve the annotation HTTP API");
    a->add_option("--data-dir", an.data_dir, "Directory holding dataset.jsonl and the annotation log")->required()->check(CLI::ExistingDirectory);
    a->add_option("--port", an.port, "Port (0 picks a free one)")->capture_default_str();
    a->add_option("--host", an.host, "Bind address")->capture_default_str();
    a->add_option("--static-dir", an.static_dir, "UI bundle to serve at / (default: <data-dir>/ui)");
    a->add_option("--crop", an.crop, "Normalised crop size (px)")->capture_default_str()->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*m) return run_match(match, common);
        if (*s) return run_swap(swap, common);
        if (*e) return run_eval(ev);
        if (*g) return run_gs_report(gs, common);
        if (*c) return run_gradcheck(gc, common);
        if (*t) return run_toyfit(toy, common);
        if (*st) return run_stats(stats_file, stats_json);
        if (*a) return run_annotate(an);
    } catch (const BlendError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitSolverFailed;
    } catch (const Error& err) {
        std::cerr << "error: " << to_string(err.code()) << ": " << err.what() << '\n';
        return kExitInvalidInput;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitInvalidInput;
    }
    return 0;
}

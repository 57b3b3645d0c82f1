// Writes the synthetic fixture set shipped in data/fixtures. The output is a
// pure function of the seed, so regenerating it must reproduce the files
// byte for byte.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "gazeswap/dataset_io.hpp"
#include "gazeswap/loss_io.hpp"
#include "gazeswap/pipeline.hpp"
#include "gazeswap/synthetic.hpp"

using namespace gazeswap;
namespace syn = gazeswap::synthetic;
namespace fs = std::filesystem;

namespace {

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

Landmarks68 rounded(Landmarks68 lmk) {
    for (auto& p : lmk) p = {round3(p.x), round3(p.y)};
    return lmk;
}

struct Placement {
    std::string id;
    double pitch, yaw, roll;
    Eigen::Vector3d translation;
    GazeAngles gaze;
};

struct SceneSpec {
    std::string name;
    int width, height;
    std::uint64_t seed;
    std::vector<Placement> faces;
};

AttributeRecord attributes_for(Rng& rng, const std::string& id, FaceSource source, const Landmarks68& normalized_lmk,
                               double pitch, double yaw) {
    AttributeRecord r;
    r.face_id = id;
    r.source = source;
    r.lmk = rounded(normalized_lmk);
    r.pose = {round3(pitch), round3(yaw)};
    r.age = syn::peaked<9>(rng, static_cast<std::size_t>(rng.next() % 9));
    r.race = syn::peaked<7>(rng, static_cast<std::size_t>(rng.next() % 7));
    r.gender = syn::peaked<2>(rng, static_cast<std::size_t>(rng.next() % 2));
    return r;
}

void write_matching_and_swap_inputs(const fs::path& dir, std::uint64_t seed) {
    Rng rng(seed);
    const NormalizationParams params;
    std::vector<AttributeRecord> attributes;
    std::vector<FaceEntry> faces;

    const std::vector<SceneSpec> scenes{
        {"scene_a", 480, 360, seed + 1,
         {{"w0", 6, -18, 3, {-130, 10, 700}, GazeAngles::from_degrees(0, 0)},
          {"w1", -8, 22, -2, {130, -5, 720}, GazeAngles::from_degrees(5, -10)}}},
        {"scene_b", 480, 360, seed + 2,
         {{"w2", 12, 5, 0, {0, 20, 600}, GazeAngles::from_degrees(-5, 0)},
          {"w3", 0, -10, 0, {1500, -1000, 4000}, GazeAngles::from_degrees(0, 0)}}},
    };
    fs::create_directories(dir / "images");
    for (const auto& s : scenes) {
        const auto cam = CameraIntrinsics::default_for(s.width, s.height);
        Image img = syn::background(s.width, s.height, s.seed);
        for (const auto& f : s.faces) {
            const HeadPose pose{syn::head_rotation(f.pitch, f.yaw, f.roll), f.translation};
            const Landmarks68 lmk = rounded(syn::project_layout(pose, cam));
            syn::draw_face(img, lmk, f.gaze);
            BBox box = syn::landmark_box(lmk);
            box = {round3(box.x0), round3(box.y0), round3(box.x1), round3(box.y1)};
            FaceEntry e{f.id, FaceSource::Wider, "images/" + s.name + ".png", s.width, s.height, box, lmk, std::nullopt};
            const NormalizationResult n = normalize_face(e, params);
            Landmarks68 nl{};
            for (std::size_t i = 0; i < 68; ++i) nl[i] = apply_warp(n.warp, lmk[i]);
            attributes.push_back(attributes_for(rng, f.id, FaceSource::Wider, nl, f.pitch, f.yaw));
            faces.push_back(e);
        }
        write_png(dir / "images" / (s.name + ".png"), img);
    }

    fs::create_directories(dir / "crops");
    const CameraIntrinsics vcam{params.focal_px, params.focal_px, params.crop_px / 2.0, params.crop_px / 2.0};
    for (int i = 0; i < 10; ++i) {
        const std::string id = "e" + std::to_string(i);
        double pitch = round3(rng.uniform(-20.0, 20.0)), yaw = round3(rng.uniform(-35.0, 35.0));
        const double gaze_pitch = round3(rng.uniform(-25.0, 25.0)), gaze_yaw = round3(rng.uniform(-40.0, 40.0));
        const GazeAngles gaze = GazeAngles::from_degrees(gaze_pitch, gaze_yaw);
        Landmarks68 lmk = rounded(syn::project_layout({syn::head_rotation(pitch, yaw), {0.0, 0.0, params.distance_mm}}, vcam));
        if (i == 9) {
            // Near twin of w2 so the batch contains an eyes-only swap.
            const AttributeRecord& twin = attributes[2];
            lmk = twin.lmk;
            pitch = twin.pose[0];
            yaw = twin.pose[1];
        }
        syn::Appearance look;
        look.skin = {rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.6)};
        Image crop = syn::background(params.crop_px, params.crop_px, seed + 100 + static_cast<std::uint64_t>(i));
        syn::draw_face(crop, lmk, gaze, look);
        write_png(dir / "crops" / (id + ".png"), crop);
        BBox box = syn::landmark_box(lmk);
        box = {round3(box.x0), round3(box.y0), round3(box.x1), round3(box.y1)};
        faces.push_back({id, FaceSource::XGaze, "crops/" + id + ".png", params.crop_px, params.crop_px, box, lmk,
                         std::array<double, 2>{gaze_pitch, gaze_yaw}});
        attributes.push_back(attributes_for(rng, id, FaceSource::XGaze, lmk, pitch, yaw));
        if (i == 9) attributes.back().gender = attributes[2].gender;
    }
    write_records(dir / "attributes.jsonl", attributes);
    write_records(dir / "faces.jsonl", faces);
}

// Three labelled faces whose widths sit exactly on bin edges (30, 60, 240 px).
void write_eval_inputs(const fs::path& dir) {
    ImageAnnotation a;
    a.image_id = "eval0";
    a.image = "images/eval0.png";
    a.width = 1000;
    a.height = 800;
    const double widths[3] = {30.0, 60.0, 240.0};
    const std::array<double, 2> labels[3] = {{0.0, 0.0}, {10.0, -20.0}, {-15.0, 30.0}};
    const std::array<double, 2> preds[3] = {{3.0, 4.0}, {10.0, -10.0}, {-15.0, 30.0}};
    std::vector<Prediction> predictions;
    double x = 10.0;
    for (int i = 0; i < 3; ++i) {
        AnnotatedFace f;
        f.face_id = "q" + std::to_string(i);
        f.bbox = {x, 100.0, x + widths[i], 100.0 + widths[i]};
        f.gaze_deg = labels[i];
        a.faces.push_back(f);
        predictions.push_back({f.face_id, preds[i]});
        x += widths[i] + 20.0;
    }
    write_records(dir / "eval_annotations.jsonl", std::vector<ImageAnnotation>{a});
    write_records(dir / "eval_predictions.jsonl", predictions);
}

void write_loss_instances(const fs::path& dir, std::uint64_t seed) {
    Rng rng(seed + 7);
    std::vector<LossInstance> instances;
    for (int i = 0; i < 5; ++i) instances.push_back(random_loss_instance(rng, 6));
    write_records(dir / "loss_instances.jsonl", instances);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Write the synthetic fixture set"};
    fs::path out;
    std::uint64_t seed = 42;
    app.add_option("out_dir", out, "Output directory")->required();
    app.add_option("--seed", seed, "Random seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    try {
        fs::create_directories(out);
        write_matching_and_swap_inputs(out, seed);
        write_eval_inputs(out);
        write_loss_instances(out, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    std::cout << "wrote fixtures to " << out.string() << '\n';
    return 0;
}

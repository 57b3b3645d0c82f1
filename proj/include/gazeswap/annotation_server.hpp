#pragma once

// HTTP/JSON front end of AnnotationStore.
//
//   GET  /images                 image summaries, sorted by id
//   GET  /images/{id}/faces      faces of one image with current labels
//   GET  /faces/{id}             face metadata, label and arrow geometry
//   GET  /faces/{id}/crop        normalised crop as PNG
//   PUT  /faces/{id}/gaze        {"pitch", "yaw", "stage", "editor"} -> stored record
//   POST /import                 JSON-lines annotation records, stored as preliminary
//   GET  /export                 JSON-lines of current labels
//   GET  /*                      static files from the UI bundle, if configured

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

// Eigen must come first: <resolv.h>, pulled in by httplib, defines `_res`.
#include "gazeswap/annotation_store.hpp"
#include "gazeswap/dataset_io.hpp"

#include <httplib.h>

namespace gazeswap {

inline int http_status(Errc code) {
    switch (code) {
        case Errc::not_found: return 404;
        case Errc::conflict: return 409;
        case Errc::invalid_argument:
        case Errc::parse_error:
        case Errc::validation_error: return 400;
        case Errc::estimation_failed:
        case Errc::out_of_domain: return 422;
        default: return 500;
    }
}

namespace detail {

inline Json label_json(const std::optional<AnnotationRecord>& label) {
    if (!label) return {{"pitch", nullptr}, {"yaw", nullptr}, {"stage", nullptr}};
    return {{"pitch", label->pitch}, {"yaw", label->yaw}, {"stage", to_string(label->stage)},
            {"editor", label->editor}, {"timestamp", label->timestamp}};
}

inline Json face_json(const FaceView& f) {
    Json j;
    j["face_id"] = f.face_id;
    j["image_id"] = f.image_id;
    j["bbox"] = bbox_json(f.bbox);
    j["label"] = label_json(f.label);
    return j;
}

inline Json arrow_json(const ArrowGeometry& a) {
    Json j;
    j["r"] = a.radius;
    j["crop_scale"] = a.crop_scale;
    j["crop_r"] = a.crop_radius;
    j["origin"] = {a.origin.x, a.origin.y};
    j["end"] = a.end ? Json{a.end->x, a.end->y} : Json(nullptr);
    return j;
}

inline void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

inline void send_error(httplib::Response& res, Errc code, const std::string& message) {
    send_json(res, {{"error", std::string(to_string(code))}, {"message", message}}, http_status(code));
}

/// Runs a handler, turning library errors into JSON error payloads.
template <typename F>
httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, Errc::parse_error, e.what());
        } catch (const std::exception& e) {
            send_error(res, Errc::io_error, e.what());
        }
    };
}

}  // namespace detail

class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, std::optional<std::filesystem::path> static_dir = std::nullopt) : store_(store) {
        using detail::guarded;
        using detail::send_json;
        server_.Get("/images", guarded([this](const httplib::Request&, httplib::Response& res) {
                        Json out = Json::array();
                        for (const auto& s : store_.list_images())
                            out.push_back({{"image_id", s.image_id}, {"image", s.image}, {"image_size", {s.width, s.height}},
                                           {"faces", s.faces}, {"labeled", s.labeled}});
                        send_json(res, out);
                    }));
        server_.Get(R"(/images/([^/]+)/faces)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        Json out = Json::array();
                        for (const auto& f : store_.get_faces(req.matches[1])) out.push_back(detail::face_json(f));
                        send_json(res, out);
                    }));
        server_.Get(R"(/faces/([^/]+)/crop)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const CropResult crop = store_.get_crop(req.matches[1]);
                        res.set_content(encode_png(crop.image), "image/png");
                    }));
        server_.Get(R"(/faces/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        Json j = detail::face_json(store_.get_face(req.matches[1]));
                        try {
                            j["arrow"] = detail::arrow_json(store_.arrow(req.matches[1]));
                        } catch (const Error& e) {
                            if (e.code() == Errc::not_found) throw;
                            j["arrow"] = nullptr;
                            j["arrow_error"] = e.what();
                        }
                        send_json(res, j);
                    }));
        server_.Put(R"(/faces/([^/]+)/gaze)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const Json body = Json::parse(req.body);
                        detail::require_keys(body, {"pitch", "yaw", "stage", "editor"}, {"pitch", "yaw", "stage"});
                        const auto stage = parse_stage(detail::get_string(body, "stage"));
                        if (!stage) detail::invalid("stage", "expected preliminary, crop_adjusted or context_adjusted");
                        const auto& p = body.at("pitch");
                        const auto& y = body.at("yaw");
                        if (!p.is_number() || !y.is_number()) fail(Errc::invalid_argument, "pitch and yaw must be numbers");
                        const std::string editor = body.contains("editor") ? detail::get_string(body, "editor", true) : "";
                        const auto r = store_.put_gaze(req.matches[1], p.get<double>(), y.get<double>(), *stage, editor);
                        send_json(res, Schema<AnnotationRecord>::to_json(r));
                    }));
        server_.Post("/import", guarded([this](const httplib::Request& req, httplib::Response& res) {
                         auto parsed = read_records_string<AnnotationRecord>(req.body);
                         if (!parsed.ok()) {
                             Json errs = Json::array();
                             for (const auto& e : parsed.errors)
                                 errs.push_back({{"line", e.line}, {"error", std::string(to_string(e.code))}, {"message", e.message}});
                             send_json(res, {{"error", "validation_error"}, {"message", "import rejected"}, {"lines", errs}}, 400);
                             return;
                         }
                         send_json(res, {{"imported", store_.import_preliminary(std::move(parsed.records))}});
                     }));
        server_.Get("/export", guarded([this](const httplib::Request&, httplib::Response& res) {
                        res.set_content(serialize_all<AnnotationRecord>(store_.export_records()), "application/x-ndjson");
                    }));
        if (static_dir && std::filesystem::is_directory(*static_dir)) server_.set_mount_point("/", static_dir->string());
    }

    /// Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host = "127.0.0.1", int port = 0) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) fail(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Blocks serving requests until stop().
    void listen() { server_.listen_after_bind(); }

    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }

    httplib::Server& raw() { return server_; }

private:
    AnnotationStore& store_;
    httplib::Server server_;
};

}  // namespace gazeswap

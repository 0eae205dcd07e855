#include "ldp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ldp/parallel.hpp"

namespace ldp {

std::vector<ScoredBox> suppress_overlaps(std::vector<ScoredBox> boxes, double iou_thresh) {
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.confidence > b.confidence; });
    std::vector<ScoredBox> kept;
    for (const ScoredBox& cand : boxes) {
        bool drop = false;
        for (const ScoredBox& k : kept)
            if (iou(cand.box, k.box) > iou_thresh) {
                drop = true;
                break;
            }
        if (!drop) kept.push_back(cand);
    }
    return kept;
}

std::vector<ScoredBox> person_predictions(const DetectorParams& det, const ImageTensor& image,
                                          double thresh, double iou_thresh) {
    std::vector<ScoredBox> boxes;
    for (const Detection& d : detect(det, image)) {
        const double conf = d.obj * d.cls[static_cast<size_t>(det.config.person_class)];
        if (conf >= thresh) boxes.push_back({d.box, conf});
    }
    return suppress_overlaps(std::move(boxes), iou_thresh);
}

std::vector<std::vector<BBox>> pseudo_ground_truth(const DetectorParams& det,
                                                   const std::vector<ImageTensor>& images,
                                                   double thresh) {
    std::vector<std::vector<BBox>> gt(images.size());
    parallel_for(static_cast<int>(images.size()), [&](int i) {
        for (const ScoredBox& sb : person_predictions(det, images[static_cast<size_t>(i)], thresh, 0.5))
            gt[static_cast<size_t>(i)].push_back(sb.box);
    });
    return gt;
}

double compute_ap(const std::vector<std::vector<BBox>>& gt,
                  const std::vector<std::vector<ScoredBox>>& preds, double iou_thresh,
                  std::vector<PRPoint>* curve) {
    if (!(iou_thresh > 0.0 && iou_thresh < 1.0))
        throw std::invalid_argument("compute_ap: iou_thresh must be in (0,1)");
    if (gt.size() != preds.size())
        throw std::invalid_argument("compute_ap: gt and prediction lists must align");

    int total_gt = 0;
    for (const auto& g : gt) total_gt += static_cast<int>(g.size());
    if (total_gt == 0)
        throw std::invalid_argument("compute_ap: no ground-truth boxes; AP is undefined");

    struct Entry {
        int image;
        int index;  // insertion order within image, stable tie-break
        double confidence;
    };
    std::vector<Entry> entries;
    for (size_t i = 0; i < preds.size(); ++i)
        for (size_t j = 0; j < preds[i].size(); ++j)
            entries.push_back({static_cast<int>(i), static_cast<int>(j), preds[i][j].confidence});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> used(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), false);

    std::vector<double> precision, recall;
    std::vector<double> confs;
    int tp = 0, fp = 0;
    for (const Entry& e : entries) {
        const BBox& pb = preds[static_cast<size_t>(e.image)][static_cast<size_t>(e.index)].box;
        double best_iou = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gt[static_cast<size_t>(e.image)].size(); ++g) {
            const double v = iou(pb, gt[static_cast<size_t>(e.image)][g]);
            if (v > best_iou) {
                best_iou = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best_iou >= iou_thresh && !used[static_cast<size_t>(e.image)][static_cast<size_t>(best_g)]) {
            used[static_cast<size_t>(e.image)][static_cast<size_t>(best_g)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / total_gt);
        confs.push_back(e.confidence);
    }

    // all-point interpolation: p_interp(r) = max precision at recall >= r
    std::vector<double> interp = precision;
    for (int i = static_cast<int>(interp.size()) - 2; i >= 0; --i)
        interp[static_cast<size_t>(i)] = std::max(interp[static_cast<size_t>(i)], interp[static_cast<size_t>(i) + 1]);

    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < interp.size(); ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * interp[i];
            prev_recall = recall[i];
        }
    }

    if (curve) {
        curve->clear();
        for (size_t i = 0; i < precision.size(); ++i)
            curve->push_back({confs[i], precision[i], recall[i]});
    }
    return ap;
}

double compute_asr(const DetectorParams& det, const std::vector<ImageTensor>& patched_images,
                   const std::vector<std::vector<BBox>>& gt, double thresh) {
    if (patched_images.empty() || patched_images.size() != gt.size())
        throw std::invalid_argument("compute_asr: empty or misaligned inputs");

    std::vector<int> verdict(patched_images.size(), -1);  // -1 no gt, 0 detected, 1 evaded
    parallel_for(static_cast<int>(patched_images.size()), [&](int i) {
        const auto& boxes = gt[static_cast<size_t>(i)];
        if (boxes.empty()) return;
        bool found = false;
        for (const ScoredBox& sb :
             person_predictions(det, patched_images[static_cast<size_t>(i)], thresh, 0.5)) {
            for (const BBox& g : boxes)
                if (iou(sb.box, g) >= 0.5) {
                    found = true;
                    break;
                }
            if (found) break;
        }
        verdict[static_cast<size_t>(i)] = found ? 0 : 1;
    });

    int with_gt = 0, evaded = 0;
    for (int v : verdict) {
        if (v < 0) continue;
        ++with_gt;
        evaded += v;
    }
    if (with_gt == 0)
        throw std::invalid_argument("compute_asr: no image carries a ground-truth box");
    return 100.0 * evaded / with_gt;
}

namespace {

double max_person_conf(const DetectorParams& det, const ImageTensor& image) {
    return max_person_score(detect(det, image), det.config.person_class);
}

}  // namespace

EvalReport evaluate_patch(const DetectorParams& det, const std::vector<ImageTensor>& images,
                          const ImageTensor& patch, const TransformConfig& t, double thresh,
                          double iou_thresh, RandomSource& rng) {
    EvalReport report;
    const std::vector<std::vector<BBox>> gt = pseudo_ground_truth(det, images, thresh);

    int with_gt = 0;
    for (const auto& g : gt)
        if (!g.empty()) ++with_gt;
    if (with_gt == 0)
        throw std::invalid_argument("evaluate_patch: no image has a pseudo-ground-truth box");

    // clean predictions coincide with the pseudo-GT by construction
    std::vector<std::vector<ScoredBox>> clean_preds(images.size());
    std::vector<ImageTensor> patched;
    patched.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        clean_preds[i] = person_predictions(det, images[i], thresh, 0.5);
        patched.push_back(apply_patch(images[i], gt[i], patch, t, rng));
    }

    std::vector<std::vector<ScoredBox>> patched_preds(images.size());
    report.clean_max_conf.resize(images.size());
    report.patched_max_conf.resize(images.size());
    parallel_for(static_cast<int>(images.size()), [&](int i) {
        patched_preds[static_cast<size_t>(i)] =
            person_predictions(det, patched[static_cast<size_t>(i)], thresh, 0.5);
        report.clean_max_conf[static_cast<size_t>(i)] = max_person_conf(det, images[static_cast<size_t>(i)]);
        report.patched_max_conf[static_cast<size_t>(i)] = max_person_conf(det, patched[static_cast<size_t>(i)]);
    });

    report.clean_map = 100.0 * compute_ap(gt, clean_preds, iou_thresh);
    report.patched_map = 100.0 * compute_ap(gt, patched_preds, iou_thresh);
    report.asr = compute_asr(det, patched, gt, thresh);
    return report;
}

std::vector<std::vector<double>> cross_model_matrix(
    const std::vector<const DetectorParams*>& train_dets,
    const std::vector<const DetectorParams*>& victim_dets,
    const std::vector<ImageTensor>& images, const CrossEvalStack& stack, RandomSource& rng,
    bool quiet, std::vector<std::vector<EvalReport>>* reports) {
    if (train_dets.size() < 1 || victim_dets.size() < 1)
        throw std::invalid_argument("cross_model_matrix: need at least one detector per side");
    if (!stack.ae || !stack.diff || !stack.sched)
        throw std::invalid_argument("cross_model_matrix: missing generator stack");

    if (reports) reports->clear();
    std::vector<std::vector<double>> matrix;
    for (size_t ti = 0; ti < train_dets.size(); ++ti) {
        const DetectorParams& train = *train_dets[ti];
        const std::vector<std::vector<BBox>> gt =
            pseudo_ground_truth(train, images, stack.eval_thresh);
        RandomSource opt_rng = rng.child(1000 + ti);
        const PatchResult patch =
            optimize_patch(*stack.ae, *stack.diff, *stack.sched, train, images, gt, stack.weights,
                           stack.transform, stack.colors, stack.optimizer, opt_rng, quiet);

        std::vector<double> row;
        std::vector<EvalReport> report_row;
        for (size_t vi = 0; vi < victim_dets.size(); ++vi) {
            RandomSource eval_rng = rng.child(2000 + ti * 100 + vi);
            const EvalReport rep = evaluate_patch(*victim_dets[vi], images, patch.patch,
                                                  stack.transform, stack.eval_thresh,
                                                  stack.iou_thresh, eval_rng);
            row.push_back(rep.patched_map);
            if (reports) report_row.push_back(rep);
        }
        matrix.push_back(std::move(row));
        if (reports) reports->push_back(std::move(report_row));
    }
    return matrix;
}

}  // namespace ldp

#ifndef STREAMTRACK_H
#define STREAMTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_ARGUMENT = 2,
  ST_STATUS_PARSE = 3,
  ST_STATUS_MISSING_POSE = 4,
  ST_STATUS_FRAME_MISMATCH = 5,
  ST_STATUS_EMPTY_GROUND_TRUTH = 6,
  ST_STATUS_IO = 7,
  ST_STATUS_OUT_OF_RANGE = 8,
  ST_STATUS_INTERNAL = 9,
} StStatus;

// Detections and poses of one sequence, filled before [`st_sequence_run`].
typedef struct StSequence StSequence;

// Tracks produced by [`st_sequence_run`] or loaded from a label file.
typedef struct StTracks StTracks;

// Oriented box in camera coordinates; `y` is the vertical center.
typedef struct StBox {
  double x;
  double y;
  double z;
  double w;
  double l;
  double h;
  double ry;
} StBox;

// Co-occurrence probability and normalised offsets towards a neighbouring keyframe.
typedef struct StCue {
  double co;
  double dx;
  double dz;
  double dry;
} StCue;

typedef struct StMotReport {
  double mota;
  double motp;
  double mt;
  double ml;
  uint64_t ids;
  uint64_t fm;
  uint64_t false_positives;
  uint64_t false_negatives;
  uint64_t gt;
  uint64_t matches;
} StMotReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *st_last_error(void);

// Library version as a static NUL-terminated string.
const char *st_version(void);

// Bird's-eye-view IoU of two boxes.
//
// # Safety
// `a`, `b` and `out` must be null or valid pointers.
enum StStatus st_box_iou_bev(const struct StBox *a, const struct StBox *b, double *out);

// 3D IoU of two boxes.
//
// # Safety
// `a`, `b` and `out` must be null or valid pointers.
enum StStatus st_box_iou_3d(const struct StBox *a, const struct StBox *b, double *out);

// Creates an empty sequence of `frames` frames with keyframe stride `tau`.
//
// # Safety
// `out` must be null or a valid pointer; on success it receives a handle
// to release with [`st_sequence_free`].
enum StStatus st_sequence_new(size_t frames, size_t tau, struct StSequence **out);

// Loads a sequence from a detection file and an optional pose file
// (`poses_path` may be null).
//
// # Safety
// Paths must be null or NUL-terminated; `out` must be null or valid.
enum StStatus st_sequence_load(const char *detections_path,
                               const char *poses_path,
                               struct StSequence **out);

// Releases a sequence. Null is ignored.
//
// # Safety
// `seq` must be null or a handle from this library not yet freed.
void st_sequence_free(struct StSequence *seq);

// Adds a detection on `keyframe`. `next` and `prev` may be null, meaning
// no co-occurrence and zero offsets.
//
// # Safety
// Pointers must be null or valid.
enum StStatus st_sequence_add_detection(struct StSequence *seq,
                                        size_t keyframe,
                                        const struct StBox *bbox,
                                        double score,
                                        const struct StCue *next,
                                        const struct StCue *prev);

// Sets the ego-to-world pose of `frame` from 12 row-major numbers `[R | t]`.
// Once any pose is set, every keyframe needs one.
//
// # Safety
// `seq` must be null or valid; `m` must be null or point to 12 doubles.
enum StStatus st_sequence_set_pose(struct StSequence *seq, size_t frame, const double *m);

// Tracks the sequence.
//
// # Safety
// `seq` and `out` must be null or valid; on success `out` receives a handle
// to release with [`st_tracks_free`].
enum StStatus st_sequence_run(const struct StSequence *seq, struct StTracks **out);

// Loads tracks from a KITTI tracking label file. `category` may be null to
// keep every class except `DontCare`.
//
// # Safety
// Strings must be null or NUL-terminated; `out` must be null or valid.
enum StStatus st_tracks_load_kitti(const char *path, const char *category, struct StTracks **out);

// Releases a track set. Null is ignored.
//
// # Safety
// `tracks` must be null or a handle from this library not yet freed.
void st_tracks_free(struct StTracks *tracks);

// Number of tracks; 0 for null.
//
// # Safety
// `tracks` must be null or valid.
size_t st_tracks_count(const struct StTracks *tracks);

// Id and number of states of track `index`.
//
// # Safety
// Pointers must be null or valid.
enum StStatus st_tracks_info(const struct StTracks *tracks,
                             size_t index,
                             uint64_t *out_id,
                             size_t *out_len);

// State `state` (in frame order) of track `index`.
//
// # Safety
// Pointers must be null or valid.
enum StStatus st_tracks_state(const struct StTracks *tracks,
                              size_t index,
                              size_t state,
                              size_t *out_frame,
                              struct StBox *out_box,
                              double *out_score);

// Writes tracks as KITTI tracking labels with a score column.
//
// # Safety
// Pointers must be null or valid; strings NUL-terminated.
enum StStatus st_tracks_write_kitti(const struct StTracks *tracks,
                                    const char *path,
                                    const char *category);

// CLEAR MOT scores of `hyp` against `gt` with the default MT/ML thresholds.
//
// # Safety
// Pointers must be null or valid.
enum StStatus st_evaluate(const struct StTracks *gt,
                          const struct StTracks *hyp,
                          double match_floor,
                          struct StMotReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMTRACK_H */

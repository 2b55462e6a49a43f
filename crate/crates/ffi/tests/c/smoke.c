#include <math.h>
#include <stdio.h>
#include <string.h>

#include "streamtrack.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,   \
                    #cond, st_last_error());                          \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    StBox a = {1.0, 0.8, 20.0, 1.6, 3.9, 1.5, 0.3};
    double iou = 0.0;
    CHECK(st_box_iou_bev(&a, &a, &iou) == ST_STATUS_OK);
    CHECK(fabs(iou - 1.0) < 1e-12);
    CHECK(st_box_iou_3d(&a, NULL, &iou) == ST_STATUS_NULL_POINTER);
    CHECK(strlen(st_last_error()) > 0);

    StSequence *seq = NULL;
    CHECK(st_sequence_new(10, 3, NULL) == ST_STATUS_NULL_POINTER);
    CHECK(st_sequence_new(10, 3, &seq) == ST_STATUS_OK);
    StCue both = {1.0, 0.0, 0.0, 0.0};
    size_t keyframes[] = {0, 3, 6, 9};
    for (size_t i = 0; i < 4; i++) {
        CHECK(st_sequence_add_detection(seq, keyframes[i], &a, 0.9,
                                        i < 3 ? &both : NULL,
                                        i > 0 ? &both : NULL) == ST_STATUS_OK);
    }
    CHECK(st_sequence_add_detection(seq, 4, &a, 0.9, NULL, NULL) == ST_STATUS_FRAME_MISMATCH);

    StTracks *tracks = NULL;
    CHECK(st_sequence_run(seq, &tracks) == ST_STATUS_OK);
    CHECK(st_tracks_count(tracks) == 1);
    uint64_t id = 99;
    size_t len = 0;
    CHECK(st_tracks_info(tracks, 0, &id, &len) == ST_STATUS_OK);
    CHECK(len == 10);
    size_t frame = 0;
    StBox b;
    double score = 0.0;
    CHECK(st_tracks_state(tracks, 0, 4, &frame, &b, &score) == ST_STATUS_OK);
    CHECK(frame == 4);
    CHECK(fabs(b.z - 20.0) < 1e-12);
    CHECK(st_tracks_state(tracks, 0, 10, &frame, &b, &score) == ST_STATUS_OUT_OF_RANGE);

    StMotReport r;
    CHECK(st_evaluate(tracks, tracks, 0.5, &r) == ST_STATUS_OK);
    CHECK(fabs(r.mota - 1.0) < 1e-12);
    CHECK(r.ids == 0 && r.gt == 10);

    st_tracks_free(tracks);
    st_sequence_free(seq);
    st_sequence_free(NULL);
    printf("ok %s\n", st_version());
    return 0;
}

/* Encode a .jcoef coefficient container as a baseline grayscale JPEG
 * using libjpeg's transcoding path (jpeg_write_coefficients), so the
 * stored quantized coefficients are exactly the container's.
 * usage: jcoef2jpg in.jcoef out.jpg [optimize]
 */
#include <stdio.h>
#include <stdlib.h>
#include <stdint.h>
#include <string.h>
#include <jpeglib.h>

static void rd(void *b, size_t n, FILE *f) { if (fread(b, 1, n, f) != n) exit(3); }
static uint32_t rd32(FILE *f) { uint8_t b[4]; rd(b, 4, f); return b[0] | b[1] << 8 | b[2] << 16 | (uint32_t)b[3] << 24; }
static uint16_t rd16(FILE *f) { uint8_t b[2]; rd(b, 2, f); return b[0] | b[1] << 8; }

int main(int argc, char **argv) {
  if (argc < 3) return 1;
  FILE *in = fopen(argv[1], "rb");
  char magic[4]; rd(magic, 4, in);
  if (memcmp(magic, "JCF1", 4)) return 2;
  uint32_t h = rd32(in), w = rd32(in);
  uint16_t q[64]; for (int i = 0; i < 64; i++) q[i] = rd16(in);
  int16_t *c = malloc(sizeof(int16_t) * h * w);
  for (uint32_t i = 0; i < h * w; i++) c[i] = (int16_t)rd16(in);
  fclose(in);

  struct jpeg_compress_struct cinfo; struct jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  FILE *out = fopen(argv[2], "wb");
  jpeg_stdio_dest(&cinfo, out);
  cinfo.image_width = w; cinfo.image_height = h;
  cinfo.input_components = 1; cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
#if JPEG_LIB_VERSION >= 70
  cinfo.jpeg_width = w; cinfo.jpeg_height = h;
  cinfo.min_DCT_h_scaled_size = 8; cinfo.min_DCT_v_scaled_size = 8;
#endif
  cinfo.optimize_coding = argc > 3 ? TRUE : FALSE;
  unsigned int basic[64];
  for (int i = 0; i < 64; i++) basic[i] = q[i];
  jpeg_add_quant_table(&cinfo, 0, basic, 100, TRUE);
  cinfo.comp_info[0].quant_tbl_no = 0;

  jvirt_barray_ptr arrays[1];
  int bh = h / 8, bw = w / 8;
  arrays[0] = (*cinfo.mem->request_virt_barray)((j_common_ptr)&cinfo, JPOOL_IMAGE, TRUE, bw, bh, 1);
  cinfo.comp_info[0].h_samp_factor = 1; cinfo.comp_info[0].v_samp_factor = 1;
  jpeg_write_coefficients(&cinfo, arrays);
  for (int by = 0; by < bh; by++) {
    JBLOCKARRAY row = (*cinfo.mem->access_virt_barray)((j_common_ptr)&cinfo, arrays[0], by, 1, TRUE);
    for (int bx = 0; bx < bw; bx++)
      for (int k = 0; k < 8; k++)
        for (int l = 0; l < 8; l++)
          row[0][bx][k * 8 + l] = c[(by * 8 + k) * w + bx * 8 + l];
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  fclose(out);
  return 0;
}

import struct

import numpy as np
import pytest
import torch

from stereokit.data import (DatasetSpec, PfmError, StereoSample,
                            generate_synthetic_pair, list_samples, load_sample,
                            pad_to_multiple, preprocess, read_kitti_disparity,
                            read_pfm, read_pfm_disparity, unpad_prediction,
                            write_kitti_disparity, write_pfm,
                            write_synthetic_dataset)


class TestPfm:
    def test_handcrafted_little_endian(self, tmp_path):
        # 2x2 "Pf", scale -1.0, rows bottom-to-top
        values_bottom_up = [1.0, 2.0, 3.0, 4.0]
        payload = b"".join(struct.pack("<f", v) for v in values_bottom_up)
        path = tmp_path / "tiny.pfm"
        path.write_bytes(b"Pf\n2 2\n-1.0\n" + payload)
        data, scale = read_pfm(path)
        assert scale == -1.0
        assert data.tolist() == [[3.0, 4.0], [1.0, 2.0]]

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.standard_normal((6, 8)).astype(np.float32)
        path = tmp_path / "rt.pfm"
        write_pfm(path, img)
        back, _ = read_pfm(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, img)

    def test_three_channel_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.standard_normal((4, 5, 3)).astype(np.float32)
        path = tmp_path / "rgb.pfm"
        write_pfm(path, img)
        back, _ = read_pfm(path)
        assert np.array_equal(back, img)

    def test_disparity_rejects_three_channel(self, tmp_path):
        path = tmp_path / "rgb.pfm"
        write_pfm(path, np.zeros((4, 5, 3), np.float32))
        with pytest.raises(PfmError):
            read_pfm_disparity(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"P5\n2 2\n-1.0\n" + b"\0" * 16)
        with pytest.raises(PfmError, match="byte 0"):
            read_pfm(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "trunc.pfm"
        path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 10)
        with pytest.raises(PfmError, match="byte"):
            read_pfm(path)

    def test_bad_dimension_line(self, tmp_path):
        path = tmp_path / "dims.pfm"
        path.write_bytes(b"Pf\ntwo 2\n-1.0\n")
        with pytest.raises(PfmError):
            read_pfm(path)

    def test_big_endian_scale(self, tmp_path):
        payload = struct.pack(">f", 7.5)
        path = tmp_path / "be.pfm"
        path.write_bytes(b"Pf\n1 1\n1.0\n" + payload)
        data, scale = read_pfm(path)
        assert scale == 1.0
        assert data[0, 0] == 7.5


class TestKittiPng:
    def test_decode_rule(self, tmp_path):
        raw = np.array([[25600, 0], [1, 512]], dtype=np.uint16)
        path = tmp_path / "d.png"
        from PIL import Image
        Image.fromarray(raw).save(path)
        disp, valid = read_kitti_disparity(path)
        assert disp[0, 0] == pytest.approx(100.0)
        assert not valid[0, 1]
        assert valid[1, 0] and disp[1, 0] == pytest.approx(1 / 256)
        assert disp[1, 1] == pytest.approx(2.0)

    def test_write_read_round_trip(self, tmp_path):
        disp = np.array([[1.25, 63.5]], dtype=np.float32)
        path = tmp_path / "w.png"
        write_kitti_disparity(path, disp)
        back, valid = read_kitti_disparity(path)
        assert np.allclose(back, disp)
        assert valid.all()

    def test_rejects_8bit(self, tmp_path):
        from PIL import Image
        path = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(path)
        with pytest.raises(ValueError):
            read_kitti_disparity(path)


class TestSyntheticGenerator:
    def test_deterministic_in_seed(self):
        a = generate_synthetic_pair(7, 64, 96)
        b = generate_synthetic_pair(7, 64, 96)
        assert np.array_equal(a.left, b.left)
        assert np.array_equal(a.gt_disparity, b.gt_disparity)

    def test_zero_disparity_scene(self):
        s = generate_synthetic_pair(0, 64, 96, num_shapes=0, d_range=(0, 0))
        assert s.valid.all()
        assert np.array_equal(s.left, s.right)

    @pytest.mark.parametrize("seed", range(10))
    def test_photometric_warp_identity(self, seed):
        s = generate_synthetic_pair(seed, 64, 128, num_shapes=5, d_range=(4, 40))
        d = s.gt_disparity.astype(np.int64)
        h, w = d.shape
        xs = np.arange(w)[None, :] - d
        ys = np.arange(h)[:, None].repeat(w, axis=1)
        valid = xs >= 0
        assert np.array_equal(valid, s.valid)
        assert valid.any()
        matched = s.left[:, ys[valid], xs[valid] + d[valid]]  # == left at (y, x)
        warped = s.right[:, ys[valid], xs[valid]]
        assert np.array_equal(matched, warped)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            generate_synthetic_pair(0, 60, 96)
        with pytest.raises(ValueError):
            generate_synthetic_pair(0, 64, 96, d_range=(4, 96))


class TestDatasetIO:
    def test_write_and_reload(self, tmp_path):
        root = write_synthetic_dataset(tmp_path / "ds", count=3, seed=7,
                                       height=64, width=96)
        spec = DatasetSpec(root=str(root), kind="synthetic", crop=(64, 96))
        triples = list_samples(spec)
        assert len(triples) == 3
        s = load_sample(triples[0], "synthetic")
        ref = generate_synthetic_pair(7, 64, 96, 6, (4, 28))
        assert np.array_equal(s.gt_disparity[s.valid], ref.gt_disparity[ref.valid])
        # 8-bit quantization only
        assert np.abs(s.left - ref.left).max() <= 0.51 / 255

    def test_missing_root(self):
        with pytest.raises(FileNotFoundError):
            list_samples(DatasetSpec(root="/nonexistent", kind="synthetic"))

    def test_crop_must_be_divisible(self):
        with pytest.raises(ValueError):
            DatasetSpec(root="", crop=(100, 512))


class TestPreprocess:
    def make_sample(self, h, w, seed=0):
        return generate_synthetic_pair(seed, h, w, num_shapes=3, d_range=(2, 16))

    def test_pad_arithmetic(self):
        assert pad_to_multiple(540, 960) == (4, 0)
        assert pad_to_multiple(376, 1240) == (8, 8)
        assert pad_to_multiple(64, 96) == (0, 0)

    def test_eval_padding_and_unpad(self):
        s = self.make_sample(64, 96)
        # simulate a non-multiple size by trimming
        trimmed = StereoSample(s.left[:, :60, :90], s.right[:, :60, :90],
                               s.gt_disparity[:60, :90], s.valid[:60, :90])
        item = preprocess(trimmed, DatasetSpec(root=""), training=False)
        assert item["left"].data.shape == (1, 3, 64, 96)
        assert item["pads"] == (4, 6)
        pred = torch.arange(64 * 96, dtype=torch.float32).reshape(1, 64, 96)
        unpadded = unpad_prediction(pred, item["pads"])
        assert unpadded.shape == (1, 60, 90)
        assert torch.equal(unpadded, pred[:, 4:, 6:])

    def test_train_crop_consistency(self):
        s = self.make_sample(96, 160, seed=3)
        spec = DatasetSpec(root="", crop=(64, 96))
        rng = np.random.default_rng(5)
        item = preprocess(s, spec, training=True, rng=rng)
        assert item["left"].data.shape == (1, 3, 64, 96)
        gt = item["gt"].numpy()
        valid = item["valid"].numpy()
        assert gt.shape == (64, 96)
        # the same window was applied to images and gt: the warp identity
        # still holds wherever the match stays inside the crop
        # (recover via absolute column bookkeeping is not possible post-crop,
        # so check statistics instead: cropped gt values all occur in the original)
        assert np.isin(gt[valid], s.gt_disparity).all()

    def test_crop_too_large(self):
        s = self.make_sample(64, 96)
        with pytest.raises(ValueError):
            preprocess(s, DatasetSpec(root="", crop=(256, 512)), training=True)

    def test_images_standardized(self):
        s = self.make_sample(64, 96)
        item = preprocess(s, DatasetSpec(root=""), training=False)
        # mean-subtracted data must contain negatives
        assert item["left"].data.min().item() < 0

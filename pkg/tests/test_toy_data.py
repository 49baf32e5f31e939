import numpy as np

from toy_data import make_toy_template, make_uv_sphere, toy_motion


def test_sphere_is_closed_and_outward():
    vertices, faces = make_uv_sphere(1.0)
    assert vertices.shape == (242, 3) and faces.shape == (480, 3)
    # every edge shared by exactly two faces
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)
    tris = vertices[faces]
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    assert np.all(np.einsum("ij,ij->i", normals, tris.mean(axis=1)) > 0)


def test_template_is_a_chain(toy_template):
    assert toy_template.parents.tolist() == [-1, 0, 1, 2]
    np.testing.assert_allclose(toy_template.skin_weights.sum(axis=1), 1.0)
    joints = toy_template.joint_regressor @ toy_template.rest_vertices
    assert np.all(np.diff(joints[:, 1]) < 0)
    assert make_toy_template().num_betas == 2


def test_two_subjects_stand_apart():
    poses, translations = toy_motion(30, 2)
    assert poses.shape == (2, 30, 4, 3)
    assert np.all(translations[1, :, 0] - translations[0, :, 0] > 0.5)

import pytest

from pyegd import (
    ErrorMode,
    Gesture,
    GestureInstance,
    LabelError,
    ParseError,
    Task,
    TranscriptSegment,
    format_transcript,
    parse_error_labels,
    parse_transcript,
    trial_code,
    write_error_labels,
)

HEADER = 'task,trial,gesture_index,start_frame,end_frame,gesture,error\n'


def test_task_parse_accepts_every_spelling():
    for token in ('Suturing', 'suturing', 'S'):
        assert Task.parse(token) is Task.suturing
    for token in ('NeedlePassing', 'Needle_Passing', 'np'):
        assert Task.parse(token) is Task.needle_passing
    with pytest.raises(ValueError):
        Task.parse('KnotTying')


def test_gesture_support():
    assert Gesture.parse('g1') is Gesture.G1
    assert Gesture.G8.supported
    assert not Gesture.G11.supported
    with pytest.raises(ValueError):
        Gesture.parse('X1')


def test_trial_code():
    assert trial_code('Suturing_B001') == 'B001'
    assert trial_code('S_B001.txt') == 'B001'
    with pytest.raises(ValueError):
        trial_code('Suturing_B01')


def test_parse_transcript(tmp_path):
    path = tmp_path / 'Suturing_B001.txt'
    path.write_text('80 130 G1 \n131 220 G11 \n\n221 300 G2 \n')

    segments = parse_transcript(path)

    assert segments == [
        TranscriptSegment(80, 130, Gesture.G1),
        TranscriptSegment(131, 220, Gesture.G11),
        TranscriptSegment(221, 300, Gesture.G2),
    ]
    assert parse_transcript_roundtrip(tmp_path, segments) == segments


def parse_transcript_roundtrip(tmp_path, segments):
    path = tmp_path / 'copy.txt'
    path.write_text(format_transcript(segments))
    return parse_transcript(path)


@pytest.mark.parametrize('body, line', [
    ('1 10 G1\n5 20 G2\n', 2),
    ('10 5 G1\n', 1),
    ('1 10\n', 1),
    ('1 10 G1\n11 a G2\n', 2),
])
def test_parse_transcript_rejects(tmp_path, body, line):
    path = tmp_path / 'bad.txt'
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        parse_transcript(path)
    assert info.value.line == line


def test_parse_error_labels_with_and_without_modes(tmp_path):
    plain = tmp_path / 'plain.csv'
    plain.write_text(HEADER + 'Suturing,S_B001,1,80,130,G1,1\n')
    labels = parse_error_labels(plain)
    label = labels[(Task.suturing, 'S_B001', 1)]
    assert label == 1
    assert (label.start_frame, label.end_frame, label.gesture) == (80, 130, Gesture.G1)
    assert label.modes == frozenset()

    tagged = tmp_path / 'tagged.csv'
    tagged.write_text(HEADER.rstrip('\n') + ',modes\nSuturing,S_B001,1,80,130,G1,1,MultipleAttempts;OutOfView\n')
    label = parse_error_labels(tagged)[(Task.suturing, 'S_B001', 1)]
    assert label.modes == {ErrorMode.multiple_attempts, ErrorMode.out_of_view}


@pytest.mark.parametrize('rows', [
    'Suturing,S_B001,1,80,130,G1,2\n',
    'Suturing,S_B001,1,80,130,G1,0\nSuturing,S_B001,1,80,130,G1,1\n',
    'Suturing,S_B001,1,80\n',
])
def test_parse_error_labels_rejects(tmp_path, rows):
    path = tmp_path / 'labels.csv'
    path.write_text(HEADER + rows)
    with pytest.raises(LabelError):
        parse_error_labels(path)


def test_parse_error_labels_needs_header(tmp_path):
    path = tmp_path / 'labels.csv'
    path.write_text('Suturing,S_B001,1,80,130,G1,1\n')
    with pytest.raises(LabelError):
        parse_error_labels(path)


def test_write_error_labels(tmp_path):
    instance = GestureInstance(
        index=3, gesture=Gesture.G4, start_frame=10, end_frame=40, error_label=1,
        error_modes=(ErrorMode.needle_orientation,),
    )
    path = tmp_path / 'labels.csv'
    write_error_labels(path, [(Task.needle_passing, 'NP_C002', instance)])

    label = parse_error_labels(path)[(Task.needle_passing, 'NP_C002', 3)]
    assert label == 1
    assert label.modes == {ErrorMode.needle_orientation}


def test_gesture_instance_rejects_inverted_span():
    with pytest.raises(ValueError):
        GestureInstance(index=1, gesture=Gesture.G1, start_frame=10, end_frame=5)


def test_unreadable_files_raise_parser_errors(tmp_path):
    with pytest.raises(ParseError, match='cannot read transcript'):
        parse_transcript(tmp_path / 'missing.txt')
    with pytest.raises(LabelError, match='cannot read error labels'):
        parse_error_labels(tmp_path / 'missing.csv')
